#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "pagelab/core.hpp"
#include "pagelab/entanglement.hpp"
#include "pagelab/krylov.hpp"
#include "pagelab/lattice.hpp"
#include "pagelab/lindblad.hpp"

namespace pagelab {

/// Uniform output times t_k = k * sample_dt, k = 0..count-1. Times are
/// computed from k rather than accumulated so that resumed runs agree bit
/// for bit with uninterrupted ones.
struct SampleGrid {
    double sample_dt = 0.2;
    std::size_t count = 1;

    double time(std::size_t k) const { return static_cast<double>(k) * sample_dt; }
    double t_max() const { return time(count - 1); }
};

inline SampleGrid make_grid(double t_max, double sample_dt)
{
    require(sample_dt > 0.0, ErrorCode::config, "sample_dt must be positive", sample_dt);
    require(t_max >= 0.0, ErrorCode::config, "t_max must be nonnegative", t_max);
    const double ratio = t_max / sample_dt;
    const double steps = std::round(ratio);
    require(std::abs(ratio - steps) <= 1e-9 * std::max(1.0, ratio), ErrorCode::config,
            "t_max must be a whole multiple of sample_dt", t_max);
    return {sample_dt, static_cast<std::size_t>(steps) + 1};
}

/// Number of Trotter steps per sample; sample_dt must be a multiple of dt.
inline int steps_per_sample(double sample_dt, double dt)
{
    const double ratio = sample_dt / dt;
    const double n = std::round(ratio);
    require(n >= 1.0 && std::abs(ratio - n) <= 1e-9 * ratio, ErrorCode::config,
            "sample_dt must be a whole multiple of the Trotter step dt", sample_dt);
    return static_cast<int>(n);
}

/// Closed evolution of the M + N site chain; rho_A is the reduced state of
/// the first M sites.
class FullSystemEvolver {
public:
    FullSystemEvolver(const ModelParams& p, const KrylovConfig& cfg = {})
        : params_(p)
        , cfg_(cfg)
        , h_(build_hamiltonian(p, p.M + p.N))
    {
        p.validate();
        cfg.validate();
        require(p.N >= 1, ErrorCode::config, "full-system evolution needs a bath (N >= 1)", p.N);
        const double basis_bytes = 16.0 * static_cast<double>(h_.dim()) * (cfg_.krylov_dim + 3);
        if (basis_bytes > cfg_.basis_memory_budget)
            bounds_ = estimate_spectral_bounds(h_);
    }

    const ModelParams& params() const { return params_; }
    const SparseHermitianOperator& hamiltonian() const { return h_; }
    bool uses_chebyshev() const { return bounds_.has_value(); }

    ComplexVector advance(const ComplexVector& psi, double tau, KrylovStats* stats = nullptr) const
    {
        if (bounds_)
            return chebyshev_evolve(h_, psi, tau, *bounds_, 1e-14, stats);
        return krylov_evolve(h_, psi, tau, cfg_, stats);
    }

    DensityMatrix reduce(const ComplexVector& psi) const { return partial_trace(psi, params_.M, params_.N); }

private:
    ModelParams params_;
    KrylovConfig cfg_;
    SparseHermitianOperator h_;
    std::optional<SpectralBounds> bounds_;
};

/// Trotterised Lindblad evolution of the M-site subsystem.
class LindbladEvolver {
public:
    explicit LindbladEvolver(const ModelParams& p, Splitting split = Splitting::first_order,
                             index_t dense_limit = UnitaryConjugator::kDenseLimit)
        : integ_(p, split, dense_limit)
    {
    }

    const ModelParams& params() const { return integ_.params(); }
    const LindbladIntegrator& integrator() const { return integ_; }
    const SparseHermitianOperator& hamiltonian() const { return integ_.hamiltonian(); }

    /// Whole Trotter steps followed by one partial step for any remainder.
    DensityMatrix advance(DensityMatrix rho, double tau) const
    {
        require(tau >= 0.0, ErrorCode::invalid_argument, "cannot evolve backwards", tau);
        const double dt = integ_.params().dt;
        const double ratio = tau / dt;
        int whole = static_cast<int>(std::floor(ratio + 1e-9));
        double rest = tau - whole * dt;
        if (rest < 1e-12 * dt)
            rest = 0.0;
        for (int s = 0; s < whole; ++s)
            rho = checked_step(rho);
        if (rest > 0.0)
            rho = integ_.partial_step(rho, rest);
        return rho;
    }

    DensityMatrix checked_step(const DensityMatrix& rho) const
    {
        DensityMatrix out = integ_.step(rho);
        const auto d = diagnose(out, false);
        require(d.trace_defect <= 1e-10, ErrorCode::numerical, "trace drifted in a Lindblad step", d.trace_defect);
        require(d.hermiticity_defect <= 1e-10, ErrorCode::numerical, "Hermiticity lost in a Lindblad step",
                d.hermiticity_defect);
        return out;
    }

private:
    LindbladIntegrator integ_;
};

/// |k-th from top>_A (x) |ground>_bath, the closed-system initial state.
inline ComplexVector full_system_initial_state(const ModelParams& p, index_t rank_from_top = 1)
{
    const auto ha = build_hamiltonian(p, p.M);
    const ComplexVector left = rank_from_top == 1 ? extremal_eigenstate(ha, Extremal::ceiling)
                                                  : eigenstate_by_index_from_top(ha, rank_from_top);
    const ComplexVector right = extremal_eigenstate(build_hamiltonian(p, p.N), Extremal::ground);
    return product_state(left, right);
}

inline DensityMatrix lindblad_initial_state(const ModelParams& p, index_t rank_from_top = 1)
{
    const auto ha = build_hamiltonian(p, p.M);
    const ComplexVector v = rank_from_top == 1 ? extremal_eigenstate(ha, Extremal::ceiling)
                                               : eigenstate_by_index_from_top(ha, rank_from_top);
    return DensityMatrix::pure(v);
}

/// Observer receives (sample index, time, rho_A, full state). Returning
/// false stops the run after that sample.
template <typename State>
using TrajectoryObserver = std::function<bool(std::size_t, double, const DensityMatrix&, const State&)>;

/// Streams samples k0..count-1 starting from `state` at sample k0.
inline void run_full_system(const FullSystemEvolver& ev, ComplexVector psi, const SampleGrid& grid,
                            std::size_t k0, const TrajectoryObserver<ComplexVector>& obs)
{
    for (std::size_t k = k0; k < grid.count; ++k) {
        if (k > k0)
            psi = ev.advance(psi, grid.sample_dt);
        const DensityMatrix rho = ev.reduce(psi);
        if (!obs(k, grid.time(k), rho, psi))
            return;
    }
}

inline void run_lindblad(const LindbladEvolver& ev, DensityMatrix rho, const SampleGrid& grid, std::size_t k0,
                         const TrajectoryObserver<DensityMatrix>& obs)
{
    const int per = steps_per_sample(grid.sample_dt, ev.params().dt);
    for (std::size_t k = k0; k < grid.count; ++k) {
        if (k > k0)
            for (int s = 0; s < per; ++s)
                rho = ev.checked_step(rho);
        if (!obs(k, grid.time(k), rho, rho))
            return;
    }
}

struct TimedDensity {
    double time = 0.0;
    DensityMatrix rho;
};

/// Collects rho_A at every sample time (closed system).
inline std::vector<TimedDensity> evolve_trajectory(const ComplexVector& initial, const ModelParams& p, double t_max,
                                                   double sample_dt, const KrylovConfig& cfg = {})
{
    const FullSystemEvolver ev(p, cfg);
    require(static_cast<index_t>(initial.size()) == ev.hamiltonian().dim(), ErrorCode::dimension_mismatch,
            "initial state does not live on M + N sites");
    std::vector<TimedDensity> out;
    run_full_system(ev, initial, make_grid(t_max, sample_dt), 0,
                    [&](std::size_t, double t, const DensityMatrix& r, const ComplexVector&) {
                        out.push_back({t, r});
                        return true;
                    });
    return out;
}

/// Collects rho at every sample time (Lindblad).
inline std::vector<TimedDensity> evolve_trajectory(const DensityMatrix& initial, const ModelParams& p, double t_max,
                                                   double sample_dt, Splitting split = Splitting::first_order)
{
    require(initial.dim() == (index_t{1} << p.M), ErrorCode::dimension_mismatch,
            "initial density matrix does not live on M sites");
    const LindbladEvolver ev(p, split);
    std::vector<TimedDensity> out;
    run_lindblad(ev, initial, make_grid(t_max, sample_dt), 0,
                 [&](std::size_t, double t, const DensityMatrix& r, const DensityMatrix&) {
                     out.push_back({t, r});
                     return true;
                 });
    return out;
}

} // namespace pagelab
