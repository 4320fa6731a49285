#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "pagelab/core.hpp"
#include "pagelab/linalg.hpp"
#include "pagelab/lindblad.hpp"

namespace pagelab {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Eigenvalues below this are treated as exact zeros in entropy sums.
inline constexpr double kSpectrumClip = 1e-14;

/// rho_A = Psi Psi^dag where Psi is psi viewed as a 2^M x 2^N column-major
/// matrix, because the subsystem occupies the low bits of the index.
inline DensityMatrix partial_trace(const ComplexVector& psi, int M, int N)
{
    require(M >= 0 && N >= 0 && M + N <= 40, ErrorCode::invalid_size, "bad partition sizes");
    const Eigen::Index da = Eigen::Index{1} << M, db = Eigen::Index{1} << N;
    require(psi.size() == da * db, ErrorCode::dimension_mismatch, "state dimension is not 2^(M+N)");
    const Eigen::Map<const ComplexMatrix> view(psi.data(), da, db);
    ComplexMatrix rho = ComplexMatrix::Zero(da, da);
    rho.selfadjointView<Eigen::Lower>().rankUpdate(view);
    rho.triangularView<Eigen::StrictlyUpper>() = rho.adjoint();
    return DensityMatrix(std::move(rho));
}

/// Spectrum, eigenvectors and Renyi entropies of rho_A at one time.
struct EntanglementSnapshot {
    double time = 0.0;
    RealVector eigenvalues;    // descending, clipped, summing to one
    ComplexMatrix eigenvectors; // leading columns, matching eigenvalues
    std::vector<double> alphas;
    std::vector<double> entropies;
    double min_raw_eigenvalue = 0.0; // before clipping, for positivity checks

    double entropy(double alpha) const
    {
        for (std::size_t k = 0; k < alphas.size(); ++k)
            if (alphas[k] == alpha)
                return entropies[k];
        throw Error(ErrorCode::invalid_argument, "entropy order not configured", alpha);
    }

    /// log lambda_n - log lambda_{n+1}; clipped eigenvalues count as kSpectrumClip.
    double log_gap(int n = 0) const
    {
        require(n >= 0 && n + 1 < eigenvalues.size(), ErrorCode::invalid_argument, "gap index out of range", n);
        return std::log(std::max(eigenvalues[n], kSpectrumClip)) -
               std::log(std::max(eigenvalues[n + 1], kSpectrumClip));
    }
};

inline void validate_alphas(const std::vector<double>& alphas)
{
    for (double a : alphas)
        require(a >= 0.0 && !std::isnan(a), ErrorCode::config, "Renyi order must be a nonnegative number", a);
}

/// S_alpha of a normalised nonnegative spectrum; natural logarithm.
inline double renyi_entropy(const RealVector& lambda, double alpha)
{
    if (alpha == kInfinity)
        return -std::log(lambda[0]);
    if (alpha == 1.0) {
        double s = 0.0;
        for (double l : lambda)
            if (l > 0.0)
                s -= l * std::log(l);
        return s;
    }
    double acc = 0.0;
    for (double l : lambda)
        if (l > 0.0)
            acc += std::pow(l, alpha);
    return std::log(acc) / (1.0 - alpha);
}

/// `keep_vectors` limits how many leading eigenvectors are stored (-1 keeps all).
inline EntanglementSnapshot entanglement_snapshot(const DensityMatrix& rho, double t,
                                                  const std::vector<double>& alphas, int keep_vectors = -1)
{
    validate_alphas(alphas);
    const ComplexMatrix herm = 0.5 * (rho.matrix + rho.matrix.adjoint());
    auto es = hermitian_eigen_descending(herm, keep_vectors != 0);
    EntanglementSnapshot s;
    s.time = t;
    s.eigenvalues = es.values;
    s.min_raw_eigenvalue = es.values.size() ? es.values.minCoeff() : 0.0;
    for (auto& l : s.eigenvalues)
        if (l < kSpectrumClip)
            l = 0.0;
    const double total = s.eigenvalues.sum();
    require(total > 0.0 && std::isfinite(total), ErrorCode::numerical, "density matrix has no positive weight");
    s.eigenvalues /= total;
    if (keep_vectors != 0) {
        const Eigen::Index k = keep_vectors < 0 ? es.vectors.cols()
                                                : std::min<Eigen::Index>(keep_vectors, es.vectors.cols());
        s.eigenvectors = es.vectors.leftCols(k);
    }
    s.alphas = alphas;
    for (double a : alphas)
        s.entropies.push_back(renyi_entropy(s.eigenvalues, a));
    return s;
}

/// Bhattacharyya coefficient of |v_x|^2 and |w_x|^2 over the computational basis.
template <typename V, typename W>
double bhattacharyya_overlap(const V& v, const W& w)
{
    require(v.size() == w.size(), ErrorCode::dimension_mismatch, "vectors differ in length");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        acc += std::abs(v[i]) * std::abs(w[i]);
    return acc;
}

inline RealMatrix overlap_matrix(const std::vector<EntanglementSnapshot>& series, int level = 0)
{
    require(!series.empty(), ErrorCode::invalid_argument, "empty snapshot series");
    const Eigen::Index n = static_cast<Eigen::Index>(series.size());
    for (const auto& s : series)
        require(level < s.eigenvectors.cols(), ErrorCode::invalid_argument, "level has no stored eigenvector",
                level);
    RealMatrix b(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        b(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j)
            b(i, j) = b(j, i) =
                bhattacharyya_overlap(series[i].eigenvectors.col(level), series[j].eigenvectors.col(level));
    }
    return b;
}

/// Greedy maximal-overlap assignment of the columns of `cur` to those of
/// `prev`: result[k] is the column of `cur` that continues level k.
inline std::vector<int> match_levels(const ComplexMatrix& prev, const ComplexMatrix& cur)
{
    require(prev.rows() == cur.rows(), ErrorCode::dimension_mismatch, "eigenvector dimensions differ");
    const int k = static_cast<int>(std::min(prev.cols(), cur.cols()));
    const RealMatrix ov = (prev.leftCols(k).adjoint() * cur.leftCols(k)).cwiseAbs();
    std::vector<std::tuple<double, int, int>> pairs;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            pairs.emplace_back(-ov(i, j), i, j);
    std::sort(pairs.begin(), pairs.end());
    std::vector<int> out(k, -1), taken(k, 0);
    for (const auto& [neg, i, j] : pairs)
        if (out[i] < 0 && !taken[j]) {
            out[i] = j;
            taken[j] = 1;
        }
    return out;
}

/// For each snapshot, the tracked label of each stored eigenvector column,
/// following maximal overlap from the first snapshot onwards.
inline std::vector<std::vector<int>> track_levels(const std::vector<EntanglementSnapshot>& series)
{
    std::vector<std::vector<int>> labels;
    if (series.empty())
        return labels;
    const int k = static_cast<int>(series.front().eigenvectors.cols());
    std::vector<int> first(k);
    std::iota(first.begin(), first.end(), 0);
    labels.push_back(first);
    for (std::size_t s = 1; s < series.size(); ++s) {
        const auto m = match_levels(series[s - 1].eigenvectors, series[s].eigenvectors);
        std::vector<int> lab(series[s].eigenvectors.cols(), -1);
        for (std::size_t i = 0; i < m.size(); ++i)
            lab[m[i]] = labels.back()[i];
        labels.push_back(std::move(lab));
    }
    return labels;
}

struct CrossingOptions {
    double prominence = 0.5;  // nats on both sides
    double refine_tol = 1e-3; // time units
    int level = 0;            // pair (level, level + 1)
};

struct CrossingEvent {
    double t_star = 0.0;
    double min_gap = 0.0;
    int level_lo = 0;
    int level_hi = 1;
    bool refined = false;
    std::string flag; // "refined", "unrefined" or "boundary"
    double t_error = 0.0;
    double gap_error = 0.0;
    std::size_t sample_index = 0;
    double overlap_across = 1.0; // B(top(t_{i-1}), top(t_{i+1}))
    double overlap_before = 1.0; // B(top(t_{i-2}), top(t_{i-1}))
    double bhattacharyya_jump = 0.0; // overlap_before - overlap_across
    bool labels_exchanged = false;

    std::string level_pair() const { return std::to_string(level_lo) + "-" + std::to_string(level_hi); }
};

/// Gap as a function of time obtained by re-running dynamics; used to
/// refine each sampled minimum.
using GapProbe = std::function<double(double)>;

/// Given the sample index of a candidate minimum, returns a probe valid on
/// [t_{i-1}, t_{i+1}], or an empty function when no restart state exists.
using ProbeFactory = std::function<GapProbe(std::size_t)>;

struct GoldenResult {
    double x = 0.0;
    double f = 0.0;
    double bracket_spread = 0.0; // max f on the final bracket minus f
    bool interior = true;
};

/// Golden-section minimisation of f on [a, b] until b - a <= tol.
template <typename F>
GoldenResult golden_section_minimize(F&& f, double a, double b, double tol)
{
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    const double a0 = a, b0 = b;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    GoldenResult g;
    if (fc <= fd) {
        g.x = c;
        g.f = fc;
    } else {
        g.x = d;
        g.f = fd;
    }
    g.bracket_spread = std::abs(fc - fd);
    g.interior = (g.x - a0) > 2.0 * tol && (b0 - g.x) > 2.0 * tol;
    return g;
}

namespace detail {

inline std::vector<double> gap_series(const std::vector<EntanglementSnapshot>& series, int level)
{
    std::vector<double> g;
    g.reserve(series.size());
    for (const auto& s : series)
        g.push_back(s.log_gap(level));
    return g;
}

/// Rise of g from index i to the highest point reached before g drops below
/// g[i] again, scanning in direction `dir`.
inline double side_prominence(const std::vector<double>& g, std::size_t i, int dir)
{
    double peak = g[i];
    for (long j = static_cast<long>(i) + dir; j >= 0 && j < static_cast<long>(g.size()); j += dir) {
        if (g[j] < g[i])
            break;
        peak = std::max(peak, g[j]);
    }
    return peak - g[i];
}

} // namespace detail

/// Local minima of log lambda_n - log lambda_{n+1} whose gap rises by at least
/// `prominence` on both sides, each refined with `probe` when one is given.
inline std::vector<CrossingEvent> detect_crossings(const std::vector<EntanglementSnapshot>& series,
                                                   const CrossingOptions& opt = {},
                                                   const ProbeFactory& probes = nullptr)
{
    std::vector<CrossingEvent> events;
    if (series.size() < 3)
        return events;
    for (std::size_t i = 1; i < series.size(); ++i)
        require(series[i].time > series[i - 1].time, ErrorCode::invalid_argument,
                "snapshot times must increase");
    const auto g = detail::gap_series(series, opt.level);
    const auto labels = series.front().eigenvectors.cols() > opt.level + 1 ? track_levels(series)
                                                                            : std::vector<std::vector<int>>{};
    for (std::size_t i = 1; i + 1 < g.size(); ++i) {
        // Plateaus count once, at their left end.
        if (!(g[i] < g[i - 1] && g[i] <= g[i + 1]))
            continue;
        if (detail::side_prominence(g, i, -1) < opt.prominence || detail::side_prominence(g, i, +1) < opt.prominence)
            continue;
        CrossingEvent ev;
        ev.level_lo = opt.level;
        ev.level_hi = opt.level + 1;
        ev.sample_index = i;
        ev.t_star = series[i].time;
        ev.min_gap = g[i];
        const double lo = series[i - 1].time, hi = series[i + 1].time;
        ev.t_error = 0.5 * std::min(series[i].time - lo, hi - series[i].time);
        ev.gap_error = 0.0;
        ev.flag = "unrefined";
        const GapProbe probe = probes ? probes(i) : GapProbe{};
        if (probe) {
            const auto gr = golden_section_minimize(probe, lo, hi, opt.refine_tol);
            if (gr.interior) {
                ev.t_star = gr.x;
                ev.min_gap = std::min(gr.f, g[i]);
                if (gr.f > g[i])
                    ev.t_star = series[i].time;
                ev.refined = true;
                ev.flag = "refined";
                ev.t_error = 0.5 * opt.refine_tol;
                ev.gap_error = gr.bracket_spread;
            } else {
                ev.flag = "boundary";
            }
        }
        ev.min_gap = std::max(ev.min_gap, 0.0);
        const auto& top = [&](std::size_t k) { return series[k].eigenvectors.col(opt.level); };
        if (series[i].eigenvectors.cols() > opt.level) {
            ev.overlap_across = bhattacharyya_overlap(top(i - 1), top(i + 1));
            ev.overlap_before = i >= 2 ? bhattacharyya_overlap(top(i - 2), top(i - 1)) : 1.0;
            ev.bhattacharyya_jump = ev.overlap_before - ev.overlap_across;
        }
        if (!labels.empty()) {
            const auto& a = labels[i - 1];
            const auto& b = labels[i + 1];
            ev.labels_exchanged = a[opt.level] != b[opt.level];
        }
        events.push_back(ev);
    }
    std::sort(events.begin(), events.end(),
              [](const CrossingEvent& a, const CrossingEvent& b) { return a.t_star < b.t_star; });
    return events;
}

/// Vertex of the parabola through three points (x_k, y_k).
inline double parabola_vertex(double x0, double y0, double x1, double y1, double x2, double y2)
{
    const double d0 = (y1 - y0) / (x1 - x0);
    const double d1 = (y2 - y1) / (x2 - x1);
    const double curv = (d1 - d0) / (x2 - x0);
    if (curv == 0.0)
        return x1;
    const double v = 0.5 * (x0 + x1) - d0 / (2.0 * curv);
    return std::clamp(v, x0, x2);
}

struct PageTime {
    double time = 0.0;
    std::size_t index = 0; // discrete argmax
    double peak = 0.0;     // S_alpha at the discrete argmax
};

/// Argmax of S_alpha refined by quadratic interpolation around the discrete maximum.
inline PageTime page_time_detail(const std::vector<double>& t, const std::vector<double>& s)
{
    require(t.size() == s.size() && !t.empty(), ErrorCode::invalid_argument, "time and entropy series differ");
    const std::size_t k = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    require(k > 0 && k + 1 < s.size(), ErrorCode::not_converged,
            "entropy maximum sits at an endpoint of the series; run longer", t[k]);
    PageTime p;
    p.index = k;
    p.peak = s[k];
    p.time = parabola_vertex(t[k - 1], s[k - 1], t[k], s[k], t[k + 1], s[k + 1]);
    return p;
}

inline PageTime page_time_detail(const std::vector<EntanglementSnapshot>& series, double alpha)
{
    std::vector<double> t, s;
    for (const auto& x : series) {
        t.push_back(x.time);
        s.push_back(x.entropy(alpha));
    }
    return page_time_detail(t, s);
}

inline double page_time(const std::vector<EntanglementSnapshot>& series, double alpha)
{
    return page_time_detail(series, alpha).time;
}

/// Ordinary least squares y = a + b x with standard errors.
struct LinearFit {
    double slope = 0.0;
    double slope_se = 0.0;
    double intercept = 0.0;
    double intercept_se = 0.0;
    double r_squared = 1.0;
    double rss = 0.0;
    std::size_t points = 0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    require(x.size() == y.size() && x.size() >= 2, ErrorCode::invalid_argument, "need at least two points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    require(sxx > 0.0, ErrorCode::invalid_argument, "abscissae are all equal");
    LinearFit f;
    f.points = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        f.rss += r * r;
    }
    if (x.size() > 2) {
        const double s2 = f.rss / (n - 2.0);
        f.slope_se = std::sqrt(s2 / sxx);
        f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    f.r_squared = syy > 0.0 ? 1.0 - f.rss / syy : 1.0;
    return f;
}

struct GapSample {
    double gap_first = 0.0;
    double gap_page = 0.0;
};

/// Exponential (log gap vs M) and power-law (log gap vs log M) fits, reported
/// side by side without choosing between them.
struct GapFits {
    std::optional<LinearFit> exponential;
    std::optional<LinearFit> power_law;
};

struct GapScalingResult {
    std::vector<int> sizes;
    std::vector<double> gaps_first;
    std::vector<double> gaps_page;
    GapFits first;
    GapFits page;
    std::vector<std::string> excluded; // nonpositive gaps left out of the fits
};

namespace detail {

inline GapFits fit_gaps(const std::vector<int>& sizes, const std::vector<double>& gaps, const char* which,
                        std::vector<std::string>& excluded)
{
    std::vector<double> m, logm, logg;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (!(gaps[i] > 0.0) || !std::isfinite(gaps[i])) {
            excluded.push_back(std::string(which) + " M=" + std::to_string(sizes[i]));
            continue;
        }
        m.push_back(sizes[i]);
        logm.push_back(std::log(static_cast<double>(sizes[i])));
        logg.push_back(std::log(gaps[i]));
    }
    GapFits f;
    if (m.size() >= 3) {
        f.exponential = linear_fit(m, logg);
        f.power_law = linear_fit(logm, logg);
    }
    return f;
}

} // namespace detail

inline GapScalingResult gap_scaling(const std::map<int, GapSample>& per_size)
{
    GapScalingResult r;
    for (const auto& [M, s] : per_size) {
        r.sizes.push_back(M);
        r.gaps_first.push_back(s.gap_first);
        r.gaps_page.push_back(s.gap_page);
    }
    r.first = detail::fit_gaps(r.sizes, r.gaps_first, "first", r.excluded);
    r.page = detail::fit_gaps(r.sizes, r.gaps_page, "page", r.excluded);
    return r;
}

struct IprRow {
    double time = 0.0;
    double ipr = 0.0;
    RealVector magnitudes; // |<reference|psi_n(t)>|
};

inline IprRow ipr_row(const EntanglementSnapshot& s, const ComplexVector& reference)
{
    require(reference.size() == s.eigenvectors.rows(), ErrorCode::dimension_mismatch,
            "reference and eigenvector dimensions differ");
    IprRow row;
    row.time = s.time;
    row.magnitudes = (s.eigenvectors.adjoint() * reference).cwiseAbs();
    row.ipr = row.magnitudes.array().pow(4).sum();
    return row;
}

inline std::vector<IprRow> ipr_diagnostic(const std::vector<EntanglementSnapshot>& series,
                                          const ComplexVector& reference)
{
    std::vector<IprRow> out;
    out.reserve(series.size());
    for (const auto& s : series)
        out.push_back(ipr_row(s, reference));
    return out;
}

} // namespace pagelab
