#pragma once

#include <cmath>
#include <vector>

#include "pagelab/core.hpp"
#include "pagelab/linalg.hpp"
#include "pagelab/operator.hpp"

namespace pagelab {

struct KrylovConfig {
    int krylov_dim = 30;
    double step_dt = 0.05;
    double error_tol = 1e-10;
    /// Above this many bytes of Lanczos basis the memory-light Chebyshev
    /// propagator takes over.
    double basis_memory_budget = 1.5e9;

    void validate() const
    {
        require(krylov_dim >= 2, ErrorCode::config, "krylov_dim must be at least 2", krylov_dim);
        require(step_dt > 0.0, ErrorCode::config, "step_dt must be positive", step_dt);
        require(error_tol > 0.0, ErrorCode::config, "error_tol must be positive", error_tol);
    }
};

struct KrylovStats {
    int substeps = 0;
    int matvecs = 0;
    double max_local_error = 0.0;
    double norm_drift = 0.0; // | ||psi(t)|| - 1 | before renormalisation
    bool used_chebyshev = false;
};

namespace detail {

inline void check_finite(const ComplexVector& v, const char* where)
{
    if (!v.allFinite())
        throw Error(ErrorCode::numerical, std::string("NaN or Inf detected in ") + where);
}

/// One Lanczos substep of length tau. Returns false when the error estimate
/// exceeds tol before the basis is exhausted.
template <typename Op>
bool lanczos_substep(const Op& op, ComplexVector& psi, double tau, const KrylovConfig& cfg,
                     ComplexMatrix& basis, KrylovStats& st, double& err_out)
{
    const Eigen::Index n = psi.size();
    const int m = static_cast<int>(std::min<Eigen::Index>(cfg.krylov_dim, n));
    const double nrm = psi.norm();
    std::vector<double> alpha, beta;
    ComplexVector w(n);
    basis.col(0) = psi / nrm;
    int k = 0;
    bool breakdown = false;
    Eigen::VectorXcd coef;
    double err = 0.0;
    while (true) {
        op.apply(basis.col(k).data(), w.data());
        ++st.matvecs;
        alpha.push_back(basis.col(k).dot(w).real());
        w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).adjoint() * w);
        w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).adjoint() * w);
        const double b = w.norm();
        const int dimk = k + 1;
        RealMatrix t = RealMatrix::Zero(dimk, dimk);
        for (int i = 0; i < dimk; ++i) {
            t(i, i) = alpha[i];
            if (i + 1 < dimk)
                t(i, i + 1) = t(i + 1, i) = beta[i];
        }
        Eigen::SelfAdjointEigenSolver<RealMatrix> es(t);
        // exp(-i tau T) e_1
        Eigen::VectorXcd phase(dimk);
        for (int i = 0; i < dimk; ++i)
            phase[i] = std::exp(-I * tau * es.eigenvalues()[i]) * es.eigenvectors()(0, i);
        coef = es.eigenvectors().cast<cplx>() * phase;
        breakdown = b < 1e-12 * std::max(1.0, std::abs(alpha.back()));
        err = breakdown ? 0.0 : b * std::abs(coef[dimk - 1]);
        if (breakdown || err <= cfg.error_tol || dimk == m) {
            k = dimk;
            break;
        }
        beta.push_back(b);
        basis.col(k + 1) = w / b;
        ++k;
    }
    err_out = err;
    if (err > cfg.error_tol && !breakdown)
        return false;
    psi = nrm * (basis.leftCols(k) * coef);
    return true;
}

} // namespace detail

/// psi(t) = exp(-i H t) psi(0) by Lanczos substeps of at most cfg.step_dt,
/// halving a substep whenever its local error estimate exceeds cfg.error_tol.
template <typename Op>
ComplexVector lanczos_evolve(const Op& op, ComplexVector psi, double t, const KrylovConfig& cfg,
                             KrylovStats* stats = nullptr)
{
    cfg.validate();
    KrylovStats st;
    if (t == 0.0) {
        if (stats)
            *stats = st;
        return psi;
    }
    const Eigen::Index n = psi.size();
    const int m = static_cast<int>(std::min<Eigen::Index>(cfg.krylov_dim, n));
    ComplexMatrix basis(n, m);
    const int nsteps = static_cast<int>(std::ceil(std::abs(t) / cfg.step_dt - 1e-12));
    const double tau0 = t / nsteps;
    for (int s = 0; s < nsteps; ++s) {
        double remaining = tau0;
        double tau = tau0;
        while (remaining != 0.0) {
            double err = 0.0;
            if (std::abs(tau) > std::abs(remaining))
                tau = remaining;
            if (detail::lanczos_substep(op, psi, tau, cfg, basis, st, err)) {
                ++st.substeps;
                st.max_local_error = std::max(st.max_local_error, err);
                remaining -= tau;
                if (std::abs(remaining) < 1e-15 * std::abs(tau0))
                    remaining = 0.0;
            } else {
                tau *= 0.5;
                require(std::abs(tau) > 1e-12 * std::abs(tau0), ErrorCode::convergence,
                        "Krylov substep could not reach the error tolerance", err);
            }
        }
        detail::check_finite(psi, "Krylov propagation");
    }
    const double nrm = psi.norm();
    st.norm_drift = std::abs(nrm - 1.0);
    psi /= nrm;
    if (stats)
        *stats = st;
    return psi;
}

/// Interval containing the spectrum of a Hermitian operator.
struct SpectralBounds {
    double lo = -1.0;
    double hi = 1.0;
};

/// Lanczos estimate of the extremal eigenvalues widened by a safety margin
/// and clipped to the Gershgorin interval. Uses three vectors only.
template <typename Op>
SpectralBounds estimate_spectral_bounds(const Op& op, int iterations = 60)
{
    const Eigen::Index n = static_cast<Eigen::Index>(op.dim());
    // Gershgorin interval from the Pauli coefficients.
    double offdiag = 0.0;
    for (const auto& g : op.groups())
        if (g.x_mask != 0)
            for (const auto& [z, c] : g.z_terms)
                offdiag += std::abs(c);
    const double gmin = op.diagonal().minCoeff() - offdiag;
    const double gmax = op.diagonal().maxCoeff() + offdiag;
    if (n <= 64) {
        const RealVector ev = Eigen::SelfAdjointEigenSolver<ComplexMatrix>(op.to_dense(), Eigen::EigenvaluesOnly)
                                  .eigenvalues();
        const double pad = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
        return {ev.minCoeff() - pad, ev.maxCoeff() + pad};
    }
    std::mt19937_64 rng(0xb0b);
    std::normal_distribution<double> nd;
    ComplexVector v(n), vprev = ComplexVector::Zero(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i)
        v[i] = cplx(nd(rng), nd(rng));
    v.normalize();
    std::vector<double> alpha, beta;
    double bprev = 0.0;
    const int iters = static_cast<int>(std::min<Eigen::Index>(iterations, n));
    for (int k = 0; k < iters; ++k) {
        op.apply(v.data(), w.data());
        const double a = v.dot(w).real();
        alpha.push_back(a);
        w -= a * v + bprev * vprev;
        const double b = w.norm();
        if (b < 1e-12)
            break;
        beta.push_back(b);
        vprev = v;
        v = w / b;
        bprev = b;
    }
    const int k = static_cast<int>(alpha.size());
    RealMatrix t = RealMatrix::Zero(k, k);
    for (int i = 0; i < k; ++i) {
        t(i, i) = alpha[i];
        if (i + 1 < k)
            t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    const RealVector ev = Eigen::SelfAdjointEigenSolver<RealMatrix>(t, Eigen::EigenvaluesOnly).eigenvalues();
    const double width = ev.maxCoeff() - ev.minCoeff();
    const double margin = 0.05 * width + 1e-6;
    return {std::max(gmin, ev.minCoeff() - margin), std::min(gmax, ev.maxCoeff() + margin)};
}

/// exp(-i H t) applied to every column of `x` by a Chebyshev expansion on the
/// interval `b`. ApplyBlock(in, out) must compute out = H in for a block.
template <typename Block, typename ApplyBlock>
Block chebyshev_propagate(const ApplyBlock& apply_h, const Block& x, double t, SpectralBounds b,
                          double tol = 1e-14, int* terms_used = nullptr)
{
    if (t == 0.0)
        return x;
    const double half = 0.5 * (b.hi - b.lo);
    const double mid = 0.5 * (b.hi + b.lo);
    const double z = half * t;
    // c_k = (2 - delta_k0) (-i)^k J_k(z); the series converges once k >> |z|.
    Block t_prev = x;
    Block t_cur(x.rows(), x.cols());
    Block scratch(x.rows(), x.cols());
    apply_h(x, t_cur);
    t_cur = (t_cur - mid * x) / half;
    const auto coeff = [z](int k) {
        const double j = std::cyl_bessel_j(static_cast<double>(k), std::abs(z));
        // J_k(-z) = (-1)^k J_k(z)
        const double sgn = (z < 0 && (k & 1)) ? -1.0 : 1.0;
        static const cplx pw[4] = {{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
        return (k == 0 ? 1.0 : 2.0) * sgn * j * pw[k & 3];
    };
    Block acc = coeff(0) * t_prev + coeff(1) * t_cur;
    int k = 2;
    int small = 0;
    const int kmax = static_cast<int>(std::abs(z)) + 400;
    for (; k < kmax; ++k) {
        apply_h(t_cur, scratch);
        const cplx c = coeff(k);
        {
            // Recurrence and accumulation in a single pass over memory.
            const double a = 2.0 / half;
            cplx* sp = scratch.data();
            const cplx* tc = t_cur.data();
            const cplx* tp = t_prev.data();
            cplx* ac = acc.data();
            const Eigen::Index len = scratch.size();
            for (Eigen::Index i = 0; i < len; ++i) {
                const cplx v = a * (sp[i] - mid * tc[i]) - tp[i];
                sp[i] = v;
                ac[i] += c * v;
            }
        }
        std::swap(t_prev, t_cur);
        std::swap(t_cur, scratch);
        if (k > std::abs(z) && std::abs(c) < tol) {
            if (++small >= 3)
                break;
        } else {
            small = 0;
        }
    }
    if (terms_used)
        *terms_used = k;
    return std::exp(-I * mid * t) * acc;
}

/// Chebyshev version of krylov_evolve for states too large for a Lanczos basis.
template <typename Op>
ComplexVector chebyshev_evolve(const Op& op, const ComplexVector& psi, double t, SpectralBounds b,
                               double tol = 1e-14, KrylovStats* stats = nullptr)
{
    int terms = 0;
    ComplexVector out = chebyshev_propagate(
        [&op](const ComplexVector& in, ComplexVector& o) { op.apply(in.data(), o.data()); }, psi, t, b, tol,
        &terms);
    detail::check_finite(out, "Chebyshev propagation");
    const double nrm = out.norm();
    if (stats) {
        stats->used_chebyshev = true;
        stats->matvecs += terms;
        stats->substeps += 1;
        stats->norm_drift = std::abs(nrm - 1.0);
    }
    out /= nrm;
    return out;
}

/// exp(-i H t) psi, choosing Lanczos when its basis fits the memory budget.
template <typename Op>
ComplexVector krylov_evolve(const Op& op, const ComplexVector& psi, double t,
                            const KrylovConfig& cfg = {}, KrylovStats* stats = nullptr)
{
    require(static_cast<index_t>(psi.size()) == op.dim(), ErrorCode::dimension_mismatch,
            "state and operator dimensions differ");
    require(std::abs(psi.norm() - 1.0) <= 1e-8, ErrorCode::invalid_argument, "input state is not normalised",
            psi.norm());
    const double basis_bytes = 16.0 * static_cast<double>(psi.size()) * (cfg.krylov_dim + 3);
    if (t == 0.0 || basis_bytes <= cfg.basis_memory_budget)
        return lanczos_evolve(op, psi, t, cfg, stats);
    const auto b = estimate_spectral_bounds(op);
    return chebyshev_evolve(op, psi, t, b, 1e-14, stats);
}

} // namespace pagelab
