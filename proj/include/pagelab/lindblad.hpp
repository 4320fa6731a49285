#pragma once

#include <optional>
#include <vector>

#include "pagelab/core.hpp"
#include "pagelab/krylov.hpp"
#include "pagelab/lattice.hpp"

namespace pagelab {

/// Density matrix of the subsystem (or of any register of qubits).
struct DensityMatrix {
    ComplexMatrix matrix;

    DensityMatrix() = default;
    explicit DensityMatrix(ComplexMatrix m) : matrix(std::move(m)) {}

    static DensityMatrix pure(const ComplexVector& psi) { return DensityMatrix(psi * psi.adjoint()); }
    static DensityMatrix maximally_mixed(index_t dim)
    {
        return DensityMatrix(ComplexMatrix::Identity(dim, dim) / static_cast<double>(dim));
    }

    index_t dim() const { return static_cast<index_t>(matrix.rows()); }
    cplx trace() const { return matrix.trace(); }
    double purity() const { return matrix.cwiseAbs2().sum(); }
};

struct DensityDiagnostics {
    double trace_defect = 0.0;
    double hermiticity_defect = 0.0;
    double min_eigenvalue = 0.0;
};

inline DensityDiagnostics diagnose(const DensityMatrix& rho, bool with_spectrum = true)
{
    DensityDiagnostics d;
    d.trace_defect = std::abs(rho.trace() - 1.0);
    d.hermiticity_defect = (rho.matrix - rho.matrix.adjoint()).cwiseAbs().maxCoeff();
    if (with_spectrum) {
        const ComplexMatrix herm = 0.5 * (rho.matrix + rho.matrix.adjoint());
        d.min_eigenvalue =
            Eigen::SelfAdjointEigenSolver<ComplexMatrix>(herm, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    }
    return d;
}

/// One dissipative substep as Kraus operators on the edge pair (4x4 factors
/// embedded as identity (x) k on the 2^M space).
struct KrausChannel {
    int M = 2;
    double step_dt = 0.0;
    double gamma = 0.0;
    std::vector<Eigen::Matrix4cd> edge_kraus; // K_0 first
    Eigen::Matrix<cplx, 16, 16> superop;      // (e,f),(e',f') -> sum_j k_j(e,e') conj(k_j(f,f'))

    bool is_identity() const { return edge_kraus.size() == 1 && edge_kraus[0].isIdentity(0.0); }

    Eigen::Matrix4cd completeness() const
    {
        Eigen::Matrix4cd s = Eigen::Matrix4cd::Zero();
        for (const auto& k : edge_kraus)
            s += k.adjoint() * k;
        return s;
    }

    ComplexMatrix embedded(std::size_t j) const
    {
        const index_t rest = index_t{1} << (M - 2);
        ComplexMatrix out = ComplexMatrix::Zero(rest * 4, rest * 4);
        for (int e = 0; e < 4; ++e)
            for (int f = 0; f < 4; ++f)
                out.block(rest * e, rest * f, rest, rest).diagonal().setConstant(edge_kraus[j](e, f));
        return out;
    }

    DensityMatrix apply(const DensityMatrix& rho) const
    {
        require(rho.dim() == (index_t{1} << M), ErrorCode::dimension_mismatch, "channel/state dimension mismatch");
        if (is_identity())
            return rho;
        const Eigen::Index r = Eigen::Index{1} << (M - 2);
        ComplexMatrix out = ComplexMatrix::Zero(rho.matrix.rows(), rho.matrix.cols());
        for (int e = 0; e < 4; ++e)
            for (int f = 0; f < 4; ++f) {
                auto dst = out.block(r * e, r * f, r, r);
                for (int e2 = 0; e2 < 4; ++e2)
                    for (int f2 = 0; f2 < 4; ++f2) {
                        const cplx c = superop(4 * e + f, 4 * e2 + f2);
                        if (std::abs(c) > 1e-300)
                            dst.noalias() += c * rho.matrix.block(r * e2, r * f2, r, r);
                    }
            }
        return DensityMatrix(std::move(out));
    }
};

/// K_k = sqrt(gamma dt) Q_k and K_0 = sqrt(1 - gamma dt sum_k Q_k^dag Q_k).
inline KrausChannel build_dissipative_kraus(const JumpOperatorSet& jumps, double gamma, double dt)
{
    require(gamma >= 0.0 && dt > 0.0, ErrorCode::invalid_argument, "gamma must be >= 0 and dt > 0");
    require(gamma * dt <= 1.0, ErrorCode::step_too_large, "gamma * dt exceeds 1", gamma * dt);
    KrausChannel ch;
    ch.M = jumps.M;
    ch.step_dt = dt;
    ch.gamma = gamma;
    if (gamma == 0.0) {
        ch.edge_kraus.push_back(Eigen::Matrix4cd::Identity());
    } else {
        Eigen::Matrix4cd s = Eigen::Matrix4cd::Zero();
        for (const auto& q : jumps.edge_operators)
            s += q.adjoint() * q;
        const Eigen::Matrix4cd no_jump = Eigen::Matrix4cd::Identity() - gamma * dt * s;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix4cd> es(no_jump);
        Eigen::Vector4d root;
        for (int i = 0; i < 4; ++i) {
            const double v = es.eigenvalues()[i];
            require(v >= -1e-12, ErrorCode::step_too_large, "no-jump weight is negative", v);
            root[i] = std::sqrt(std::max(v, 0.0));
        }
        ch.edge_kraus.push_back(es.eigenvectors() * root.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint());
        for (const auto& q : jumps.edge_operators)
            ch.edge_kraus.push_back(std::sqrt(gamma * dt) * q);
    }
    ch.superop.setZero();
    for (const auto& k : ch.edge_kraus)
        for (int e = 0; e < 4; ++e)
            for (int f = 0; f < 4; ++f)
                for (int e2 = 0; e2 < 4; ++e2)
                    for (int f2 = 0; f2 < 4; ++f2)
                        ch.superop(4 * e + f, 4 * e2 + f2) += k(e, e2) * std::conj(k(f, f2));
    return ch;
}

/// rho -> exp(-iH tau) rho exp(iH tau). Small systems reuse a dense
/// propagator built from one eigendecomposition of H; larger ones apply a
/// Chebyshev expansion to the columns of rho.
class UnitaryConjugator {
public:
    static constexpr index_t kDenseLimit = index_t{1} << 10;

    UnitaryConjugator(SparseHermitianOperator h, double step, index_t dense_limit = kDenseLimit)
        : h_(std::move(h))
        , step_(step)
    {
        if (h_.dim() <= dense_limit) {
            auto es = symmetric_eigen(h_.to_dense_real());
            energies_ = std::move(es.values);
            vectors_ = std::move(es.vectors);
            step_propagator_ = propagator(step_);
            half_propagator_ = propagator(0.5 * step_);
        } else {
            bounds_ = estimate_spectral_bounds(h_);
        }
    }

    const SparseHermitianOperator& hamiltonian() const { return h_; }
    bool dense() const { return energies_.size() > 0; }

    ComplexMatrix propagator(double tau) const
    {
        require(dense(), ErrorCode::invalid_argument, "dense propagator not available");
        const Eigen::VectorXcd ph = (-I * tau * energies_.cast<cplx>()).array().exp();
        return vectors_.cast<cplx>() * ph.asDiagonal() * vectors_.transpose().cast<cplx>();
    }

    DensityMatrix conjugate(const DensityMatrix& rho, double tau) const
    {
        if (tau == 0.0)
            return rho;
        const Eigen::Index n = rho.matrix.rows();
        ComplexMatrix out(n, n);
        if (dense()) {
            const bool stored = tau == step_ || tau == 0.5 * step_;
            const ComplexMatrix other = stored ? ComplexMatrix() : propagator(tau);
            const ComplexMatrix& u = tau == step_ ? step_propagator_ : (stored ? half_propagator_ : other);
            const ComplexMatrix x = u * rho.matrix;
            out.triangularView<Eigen::Lower>() = x * u.adjoint();
        } else {
            const auto apply = [this](const ComplexMatrix& in, ComplexMatrix& o) { o = h_.apply_left(in); };
            const ComplexMatrix x = chebyshev_propagate(apply, rho.matrix, tau, *bounds_);
            out = chebyshev_propagate(apply, ComplexMatrix(x.adjoint()), tau, *bounds_);
        }
        // Hermitian by construction; rebuild the upper triangle from the lower one.
        for (Eigen::Index j = 0; j < n; ++j) {
            out(j, j) = out(j, j).real();
            for (Eigen::Index i = j + 1; i < n; ++i)
                out(j, i) = std::conj(out(i, j));
        }
        return DensityMatrix(std::move(out));
    }

private:
    SparseHermitianOperator h_;
    double step_;
    RealVector energies_;
    RealMatrix vectors_;
    ComplexMatrix step_propagator_;
    ComplexMatrix half_propagator_;
    std::optional<SpectralBounds> bounds_;
};

enum class Splitting { first_order, strang };

/// rho' = sum_j K_j (U rho U^dag) K_j^dag, or the symmetric Strang variant.
inline DensityMatrix lindblad_step(const DensityMatrix& rho, const UnitaryConjugator& unitary,
                                   const KrausChannel& channel, Splitting split = Splitting::first_order,
                                   bool check_positivity = false)
{
    DensityMatrix out;
    if (split == Splitting::first_order) {
        out = channel.apply(unitary.conjugate(rho, channel.step_dt));
    } else {
        const double half = 0.5 * channel.step_dt;
        out = unitary.conjugate(channel.apply(unitary.conjugate(rho, half)), half);
    }
    if (!out.matrix.allFinite())
        throw Error(ErrorCode::numerical, "NaN or Inf in Lindblad step");
    if (check_positivity) {
        const double mn = diagnose(out).min_eigenvalue;
        require(mn >= -1e-6, ErrorCode::integration, "density matrix lost positivity; reduce dt", mn);
    }
    return out;
}

/// Trotterised Lindblad dynamics of the M-site subsystem with edge cooling.
class LindbladIntegrator {
public:
    explicit LindbladIntegrator(const ModelParams& p, Splitting split = Splitting::first_order,
                                index_t dense_limit = UnitaryConjugator::kDenseLimit)
        : params_(p)
        , split_(split)
        , jumps_(build_jump_operators(p))
        , channel_(build_dissipative_kraus(jumps_, p.gamma, p.dt))
        , unitary_(build_hamiltonian(p, p.M), p.dt, dense_limit)
    {
        p.validate();
    }

    const ModelParams& params() const { return params_; }
    const JumpOperatorSet& jumps() const { return jumps_; }
    const KrausChannel& channel() const { return channel_; }
    const UnitaryConjugator& unitary() const { return unitary_; }
    const SparseHermitianOperator& hamiltonian() const { return unitary_.hamiltonian(); }

    DensityMatrix step(const DensityMatrix& rho) const { return lindblad_step(rho, unitary_, channel_, split_); }

    /// A single Trotter step of length tau (0 < tau <= dt), used to resolve
    /// times between regular steps.
    DensityMatrix partial_step(const DensityMatrix& rho, double tau) const
    {
        if (tau == 0.0)
            return rho;
        if (std::abs(tau - params_.dt) < 1e-15)
            return step(rho);
        const auto ch = build_dissipative_kraus(jumps_, params_.gamma, tau);
        return lindblad_step(rho, unitary_, ch, split_);
    }

private:
    ModelParams params_;
    Splitting split_;
    JumpOperatorSet jumps_;
    KrausChannel channel_;
    UnitaryConjugator unitary_;
};

} // namespace pagelab
