#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pagelab/core.hpp"
#include "pagelab/entanglement.hpp"
#include "pagelab/lattice.hpp"
#include "pagelab/lindblad.hpp"
#include "pagelab/nelder_mead.hpp"
#include "pagelab/trajectory.hpp"

namespace pagelab {

/// Local inverse temperatures of the ansatz
///   K = sum_i beta_i (g X_i + h Z_i) + sum_i betab_i J Z_i Z_{i+1} + sum_i jzx_i Z_i X_{i+1},
/// rho = exp(-K) / Tr exp(-K). Every site carries its own beta_i.
struct BetaProfile {
    double time = 0.0;
    std::vector<double> beta_site;  // M entries
    std::vector<double> beta_bond;  // M - 1 entries
    std::vector<double> current_zx; // M - 1 entries, or empty
    double loss = 0.0;              // observable-matching objective
    double loss_h = 0.0;            // sum_i (Tr h_i rho - Tr h_i rho_ansatz)^2
    double relative_entropy = 0.0;  // D(rho || rho_ansatz)
    int iterations = 0;
    bool converged = false;

    bool with_currents() const { return !current_zx.empty(); }

    static BetaProfile uniform(int M, double beta, bool currents)
    {
        BetaProfile p;
        p.beta_site.assign(M, beta);
        p.beta_bond.assign(M - 1, beta);
        if (currents)
            p.current_zx.assign(M - 1, 0.0);
        return p;
    }

    RealVector parameters() const
    {
        RealVector v(beta_site.size() + beta_bond.size() + current_zx.size());
        Eigen::Index k = 0;
        for (double b : beta_site)
            v[k++] = b;
        for (double b : beta_bond)
            v[k++] = b;
        for (double c : current_zx)
            v[k++] = c;
        return v;
    }

    void set_parameters(const RealVector& v)
    {
        require(v.size() == static_cast<Eigen::Index>(beta_site.size() + beta_bond.size() + current_zx.size()),
                ErrorCode::dimension_mismatch, "parameter vector has the wrong length");
        Eigen::Index k = 0;
        for (double& b : beta_site)
            b = v[k++];
        for (double& b : beta_bond)
            b = v[k++];
        for (double& c : current_zx)
            c = v[k++];
    }
};

/// The observables conjugate to the ansatz parameters, in parameter order.
class AnsatzBasis {
public:
    AnsatzBasis(const ModelParams& p, bool with_currents)
        : M_(p.M)
        , currents_(with_currents)
    {
        require(p.M >= 2, ErrorCode::invalid_size, "the ansatz needs at least two sites", p.M);
        require((index_t{1} << p.M) <= kDenseThreshold, ErrorCode::invalid_size,
                "ansatz fits use dense linear algebra; M is too large", p.M);
        const auto lt = build_local_terms(p, p.M);
        for (const auto& f : lt.field)
            ops_.push_back(f);
        for (const auto& b : lt.bond)
            ops_.push_back(b);
        if (with_currents)
            for (int i = 0; i + 1 < p.M; ++i) {
                const PauliTerm t{index_t{1} << (i + 1), index_t{1} << i, 1.0};
                ops_.emplace_back(p.M, std::vector<PauliTerm>{t});
            }
        for (const auto& o : ops_)
            dense_.push_back(o.to_dense_real());
        local_h_ = lt.full;
    }

    int M() const { return M_; }
    bool with_currents() const { return currents_; }
    std::size_t size() const { return ops_.size(); }
    const std::vector<SparseHermitianOperator>& operators() const { return ops_; }
    const std::vector<RealMatrix>& dense() const { return dense_; }
    const std::vector<SparseHermitianOperator>& local_hamiltonians() const { return local_h_; }

    RealMatrix generator(const RealVector& theta) const
    {
        const index_t d = index_t{1} << M_;
        RealMatrix k = RealMatrix::Zero(d, d);
        for (std::size_t j = 0; j < ops_.size(); ++j)
            if (theta[j] != 0.0)
                k += theta[j] * dense_[j];
        return k;
    }

    RealVector expectations(const ComplexMatrix& rho) const
    {
        RealVector v(ops_.size());
        for (std::size_t j = 0; j < ops_.size(); ++j)
            v[j] = ops_[j].expectation(rho).real();
        return v;
    }

private:
    int M_;
    bool currents_;
    std::vector<SparseHermitianOperator> ops_;
    std::vector<RealMatrix> dense_;
    std::vector<SparseHermitianOperator> local_h_;
};

/// Eigen-decomposed Gibbs state exp(-K)/Z with the spectral shift that keeps
/// the exponentials finite.
struct GibbsState {
    RealVector energies;      // eigenvalues of K, ascending
    RealMatrix vectors;       // eigenvectors of K
    RealVector probabilities; // exp(-(E - E_min)) / Z
    double log_z = 0.0;       // log Tr exp(-K)

    RealMatrix density() const { return vectors * probabilities.asDiagonal() * vectors.transpose(); }
};

inline GibbsState gibbs_state(const RealMatrix& k)
{
    Eigen::SelfAdjointEigenSolver<RealMatrix> es(k);
    require(es.info() == Eigen::Success, ErrorCode::numerical, "ansatz eigensolver failed");
    GibbsState g;
    g.energies = es.eigenvalues();
    g.vectors = es.eigenvectors();
    const double e0 = g.energies.minCoeff();
    g.probabilities = (-(g.energies.array() - e0)).exp().matrix();
    const double z = g.probabilities.sum();
    g.probabilities /= z;
    g.log_z = -e0 + std::log(z);
    return g;
}

inline DensityMatrix build_ansatz_density(const BetaProfile& profile, const ModelParams& params)
{
    require(static_cast<int>(profile.beta_site.size()) == params.M &&
                static_cast<int>(profile.beta_bond.size()) == params.M - 1 &&
                (profile.current_zx.empty() || static_cast<int>(profile.current_zx.size()) == params.M - 1),
            ErrorCode::dimension_mismatch, "profile lengths do not match M");
    const AnsatzBasis basis(params, profile.with_currents());
    return DensityMatrix(gibbs_state(basis.generator(profile.parameters())).density().cast<cplx>());
}

enum class FitOptimizer { newton, nelder_mead };

struct FitOptions {
    FitOptimizer optimizer = FitOptimizer::newton;
    int max_iterations = 200;      // Newton iterations
    double loss_tol = 1e-26;       // stop once the objective is this small
    double step_tol = 1e-12;       // or the parameter step is this small
    NelderMeadOptions nelder_mead{};
    double initial_beta = -1.0;
    /// Called after every accepted iteration with the value being minimised:
    /// the dual function for Newton, the squared mismatch for Nelder-Mead.
    std::function<void(double)> on_iteration;
};

namespace detail {

/// d<O_k>/d theta_l = -(Kubo-Mori covariance of O_k and O_l), computed in
/// the eigenbasis of K.
inline RealMatrix ansatz_jacobian(const AnsatzBasis& basis, const GibbsState& g, const RealVector& mean)
{
    const Eigen::Index d = g.energies.size();
    RealMatrix f(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index b = 0; b < d; ++b) {
            const double de = g.energies[b] - g.energies[a];
            if (std::abs(de) < 1e-10)
                f(a, b) = 0.5 * (g.probabilities[a] + g.probabilities[b]);
            else
                f(a, b) = (g.probabilities[a] - g.probabilities[b]) / de;
        }
    std::vector<RealMatrix> rotated;
    rotated.reserve(basis.size());
    for (const auto& o : basis.dense())
        rotated.push_back(g.vectors.transpose() * (o * g.vectors));
    const Eigen::Index n = static_cast<Eigen::Index>(basis.size());
    RealMatrix jac(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const RealMatrix weighted = rotated[k].cwiseProduct(f);
        for (Eigen::Index l = 0; l <= k; ++l) {
            const double c = weighted.cwiseProduct(rotated[l]).sum() - mean[k] * mean[l];
            jac(k, l) = jac(l, k) = -c;
        }
    }
    return jac;
}

inline RealVector gibbs_expectations(const AnsatzBasis& basis, const GibbsState& g)
{
    const RealMatrix rho = g.density();
    RealVector v(basis.size());
    for (std::size_t j = 0; j < basis.size(); ++j)
        v[j] = basis.dense()[j].cwiseProduct(rho).sum();
    return v;
}

/// D(rho || sigma) = -S(rho) - Tr rho log sigma with log sigma = -K - log Z.
inline double relative_entropy(const ComplexMatrix& rho, const AnsatzBasis& basis, const RealVector& theta,
                               const GibbsState& g)
{
    const RealVector lam = Eigen::SelfAdjointEigenSolver<ComplexMatrix>(0.5 * (rho + rho.adjoint()),
                                                                        Eigen::EigenvaluesOnly)
                               .eigenvalues();
    double s = 0.0;
    for (double l : lam)
        if (l > kSpectrumClip)
            s -= l * std::log(l);
    const double cross = basis.expectations(rho).dot(theta) + g.log_z;
    return std::max(0.0, cross - s);
}

} // namespace detail

/// Fits the ansatz by matching one expectation value per parameter.
inline BetaProfile fit_beta_profile(const DensityMatrix& rho, const ModelParams& params, bool with_currents,
                                    const BetaProfile* warm_start = nullptr, const FitOptions& opt = {})
{
    require(rho.dim() == (index_t{1} << params.M), ErrorCode::dimension_mismatch,
            "state does not live on M sites");
    const AnsatzBasis basis(params, with_currents);
    const RealVector target = basis.expectations(rho.matrix);

    BetaProfile prof = BetaProfile::uniform(params.M, opt.initial_beta, with_currents);
    if (warm_start) {
        prof.beta_site = warm_start->beta_site;
        prof.beta_bond = warm_start->beta_bond;
        if (with_currents)
            prof.current_zx = warm_start->with_currents() ? warm_start->current_zx
                                                          : std::vector<double>(params.M - 1, 0.0);
        else
            prof.current_zx.clear();
    }
    RealVector theta = prof.parameters();

    const auto objective = [&](const RealVector& th, GibbsState* keep, RealVector* mean) {
        GibbsState g = gibbs_state(basis.generator(th));
        const RealVector m = detail::gibbs_expectations(basis, g);
        const double l = (m - target).squaredNorm();
        if (keep)
            *keep = std::move(g);
        if (mean)
            *mean = m;
        return l;
    };

    int iterations = 0;
    bool converged = false;
    double loss = 0.0;
    if (opt.optimizer == FitOptimizer::nelder_mead) {
        const auto r = nelder_mead([&](const RealVector& th) { return objective(th, nullptr, nullptr); }, theta,
                                   opt.nelder_mead);
        theta = r.x;
        loss = r.value;
        iterations = r.iterations;
        converged = r.converged;
        if (opt.on_iteration)
            for (double h : r.history)
                opt.on_iteration(h);
    } else {
        // Damped Newton on the convex dual F(theta) = theta . target + log Z(theta).
        // grad F = target - mean, and the Hessian is the Kubo-Mori covariance
        // (-jacobian), so the minimiser matches every expectation value and
        // F - S(rho) = D(rho || ansatz) decreases at every accepted step.
        const auto dual = [&](const RealVector& th, GibbsState& g, RealVector& mean) {
            g = gibbs_state(basis.generator(th));
            mean = detail::gibbs_expectations(basis, g);
            return th.dot(target) + g.log_z;
        };
        GibbsState g;
        RealVector mean;
        double f = dual(theta, g, mean);
        loss = (mean - target).squaredNorm();
        double mu = 1e-8;
        for (; iterations < opt.max_iterations; ++iterations) {
            if (loss <= opt.loss_tol) {
                converged = true;
                break;
            }
            const RealMatrix hess = -detail::ansatz_jacobian(basis, g, mean);
            const RealVector grad = target - mean;
            bool accepted = false;
            RealVector step;
            for (int tries = 0; tries < 60 && !accepted; ++tries) {
                RealMatrix a = hess;
                a.diagonal().array() += mu * (1.0 + hess.diagonal().array());
                step = -a.ldlt().solve(grad);
                if (!step.allFinite()) {
                    mu = std::max(mu * 10.0, 1e-12);
                    continue;
                }
                GibbsState g2;
                RealVector mean2;
                const double f2 = dual(theta + step, g2, mean2);
                if (std::isfinite(f2) && f2 < f) {
                    theta += step;
                    g = std::move(g2);
                    mean = std::move(mean2);
                    f = f2;
                    loss = (mean - target).squaredNorm();
                    mu = std::max(mu / 10.0, 1e-14);
                    accepted = true;
                    if (opt.on_iteration)
                        opt.on_iteration(f);
                } else {
                    mu = std::max(mu * 10.0, 1e-12);
                }
            }
            if (!accepted) {
                // The dual cannot decrease further in floating point.
                break;
            }
            if (step.norm() < opt.step_tol * std::max(1.0, theta.norm())) {
                ++iterations;
                break;
            }
        }
        // A target on the boundary of the reachable moments (a pure state,
        // say) drives theta to infinity; that is reported as non-convergence.
        converged = loss <= std::max(opt.loss_tol, 1e-20);
    }

    prof.set_parameters(theta);
    prof.loss = loss;
    prof.iterations = iterations;
    prof.converged = converged;
    prof.time = 0.0;
    const GibbsState g = gibbs_state(basis.generator(theta));
    const RealMatrix ans = g.density();
    double lh = 0.0;
    for (const auto& h : basis.local_hamiltonians()) {
        const double a = h.expectation(rho.matrix).real();
        const double b = h.expectation(ComplexMatrix(ans.cast<cplx>())).real();
        lh += (a - b) * (a - b);
    }
    prof.loss_h = lh;
    prof.relative_entropy = detail::relative_entropy(rho.matrix, basis, theta, g);
    return prof;
}

/// Sequential fits along a trajectory, each warm-started from the previous one.
inline std::vector<BetaProfile> fit_trajectory(const std::vector<TimedDensity>& series, const ModelParams& params,
                                               bool with_currents, const FitOptions& opt = {})
{
    require(!series.empty(), ErrorCode::invalid_argument, "empty series");
    std::vector<BetaProfile> out;
    out.reserve(series.size());
    for (const auto& s : series) {
        BetaProfile p = fit_beta_profile(s.rho, params, with_currents, out.empty() ? nullptr : &out.back(), opt);
        p.time = s.time;
        out.push_back(std::move(p));
    }
    return out;
}

/// Spectra and entropies of the ansatz states, in the same form as the direct pipeline.
inline std::vector<EntanglementSnapshot> reconstruct_entropies(const std::vector<BetaProfile>& profiles,
                                                               const ModelParams& params,
                                                               const std::vector<double>& alphas,
                                                               int keep_vectors = 0)
{
    std::vector<EntanglementSnapshot> out;
    out.reserve(profiles.size());
    for (const auto& p : profiles)
        out.push_back(entanglement_snapshot(build_ansatz_density(p, params), p.time, alphas, keep_vectors));
    return out;
}

struct EnergyProfile {
    double time = 0.0;
    int level = -1; // eigenvector index n, or -1 for the full density matrix
    std::vector<double> per_site_total;
    std::vector<double> per_site_bond;
    std::vector<double> per_site_field;
};

/// Local energies per site: e_field[i] = <g X_i + h Z_i>, e_bond[i] = <J Z_i Z_{i+1}>
/// (zero on the last site) and e_total = e_bond + e_field, so e_total sums to <H>.
class EnergyProfiler {
public:
    explicit EnergyProfiler(const ModelParams& p)
        : M_(p.M)
        , terms_(build_local_terms(p, p.M))
    {
    }

    EnergyProfile of_state(const ComplexVector& v, double t, int level) const
    {
        return assemble(t, level, [&](const SparseHermitianOperator& o) { return o.expectation(v).real(); });
    }

    EnergyProfile of_density(const DensityMatrix& rho, double t) const
    {
        return assemble(t, -1, [&](const SparseHermitianOperator& o) { return o.expectation(rho.matrix).real(); });
    }

private:
    template <typename F>
    EnergyProfile assemble(double t, int level, F&& expect) const
    {
        EnergyProfile e;
        e.time = t;
        e.level = level;
        for (int i = 0; i < M_; ++i) {
            const double f = expect(terms_.field[i]);
            const double b = i + 1 < M_ ? expect(terms_.bond[i]) : 0.0;
            e.per_site_field.push_back(f);
            e.per_site_bond.push_back(b);
            e.per_site_total.push_back(b + f);
        }
        return e;
    }

    int M_;
    LocalTerms terms_;
};

/// Profiles of the requested eigenvectors of rho_A followed by that of rho_A itself.
inline std::vector<EnergyProfile> energy_profiles(const EntanglementSnapshot& snap, const DensityMatrix& rho,
                                                  const ModelParams& params, const std::vector<int>& levels)
{
    const EnergyProfiler prof(params);
    std::vector<EnergyProfile> out;
    for (int n : levels) {
        require(n >= 0 && n < snap.eigenvectors.cols(), ErrorCode::invalid_argument,
                "eigenvector level not available", n);
        out.push_back(prof.of_state(snap.eigenvectors.col(n), snap.time, n));
    }
    out.push_back(prof.of_density(rho, snap.time));
    return out;
}

} // namespace pagelab
