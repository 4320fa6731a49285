#pragma once

#include <array>
#include <vector>

#include <Eigen/Sparse>

#include "pagelab/core.hpp"
#include "pagelab/linalg.hpp"
#include "pagelab/operator.hpp"

namespace pagelab {

/// Mixed-field Ising chain with a subsystem of M sites, a bath of N sites and
/// the Markovian-bath parameters.
struct ModelParams {
    double g = 0.905;
    double h = 0.809;
    double J = 1.0;
    int M = 6;
    int N = 0;
    double gamma = 1.0;
    double dt = 0.2;
    bool include_ground_jump = false;

    void validate() const
    {
        require(M >= 2, ErrorCode::config, "M must be at least 2", M);
        require(N >= 0, ErrorCode::config, "N must be nonnegative", N);
        require(gamma >= 0.0, ErrorCode::config, "gamma must be nonnegative", gamma);
        require(dt > 0.0, ErrorCode::config, "dt must be positive", dt);
    }
};

enum class Extremal { ground, ceiling };

/// Dense diagonalisation is used up to this dimension, Lanczos above.
inline constexpr index_t kDenseThreshold = index_t{1} << 12;

namespace detail {

inline index_t bit(int site) { return index_t{1} << site; }

inline std::vector<PauliTerm> field_terms(const ModelParams& p, int site)
{
    return {{bit(site), 0, p.g}, {0, bit(site), p.h}};
}

inline std::vector<PauliTerm> bond_terms(double coupling, int site)
{
    return {{0, bit(site) | bit(site + 1), coupling}};
}

} // namespace detail

/// H = g sum X_i + h sum Z_i + J sum_{i<L-1} Z_i Z_{i+1}, open boundaries.
inline SparseHermitianOperator build_hamiltonian(const ModelParams& p, int L)
{
    require(L >= 1, ErrorCode::invalid_size, "site count must be positive", L);
    std::vector<PauliTerm> terms;
    for (int i = 0; i < L; ++i) {
        const auto f = detail::field_terms(p, i);
        terms.insert(terms.end(), f.begin(), f.end());
    }
    for (int i = 0; i + 1 < L; ++i) {
        const auto b = detail::bond_terms(p.J, i);
        terms.insert(terms.end(), b.begin(), b.end());
    }
    return SparseHermitianOperator(L, terms);
}

/// Three decompositions of H on L sites.
///  full[i],  i = 0..L-2 : field_i + bond_i, with field_{L-1} folded into full[L-2]
///  bond[i],  i = 0..L-2 : J Z_i Z_{i+1}
///  field[i], i = 0..L-1 : g X_i + h Z_i
struct LocalTerms {
    std::vector<SparseHermitianOperator> full;
    std::vector<SparseHermitianOperator> bond;
    std::vector<SparseHermitianOperator> field;
};

inline LocalTerms build_local_terms(const ModelParams& p, int L)
{
    require(L >= 2, ErrorCode::invalid_size, "local terms need at least two sites", L);
    LocalTerms out;
    for (int i = 0; i < L; ++i)
        out.field.emplace_back(L, detail::field_terms(p, i));
    for (int i = 0; i + 1 < L; ++i) {
        out.bond.emplace_back(L, detail::bond_terms(p.J, i));
        auto t = detail::field_terms(p, i);
        const auto b = detail::bond_terms(p.J, i);
        t.insert(t.end(), b.begin(), b.end());
        if (i == L - 2) {
            const auto last = detail::field_terms(p, L - 1);
            t.insert(t.end(), last.begin(), last.end());
        }
        out.full.emplace_back(L, t);
    }
    return out;
}

namespace detail {

inline void check_residual(const SparseHermitianOperator& op, const ComplexVector& v, double e)
{
    const double r = (op.apply(v) - e * v).norm();
    require(r <= 1e-10, ErrorCode::convergence, "eigenvector residual above 1e-10", r);
}

inline RealEigen symmetric_eigen_of(const SparseHermitianOperator& op)
{
    return symmetric_eigen(op.to_dense_real());
}

} // namespace detail

/// Lowest (ground) or highest (ceiling) eigenvector of `op`.
inline ComplexVector extremal_eigenstate(const SparseHermitianOperator& op, Extremal which,
                                         double* energy = nullptr)
{
    ComplexVector v;
    double e = 0.0;
    if (op.dim() <= kDenseThreshold) {
        const auto es = detail::symmetric_eigen_of(op);
        const Eigen::Index k = which == Extremal::ground ? 0 : es.values.size() - 1;
        e = es.values[k];
        v = es.vectors.col(k).cast<cplx>();
        fix_phase(v);
    } else {
        auto lr = lanczos_extremal(op, which == Extremal::ceiling);
        require(lr.residual <= 1e-10, ErrorCode::convergence, "Lanczos did not converge", lr.residual);
        e = lr.eigenvalue;
        v = std::move(lr.vector);
    }
    detail::check_residual(op, v, e);
    if (energy)
        *energy = e;
    return v;
}

/// k-th eigenvector counted from the top of the spectrum (k = 1 is the ceiling).
inline ComplexVector eigenstate_by_index_from_top(const SparseHermitianOperator& op, index_t k,
                                                  double* energy = nullptr)
{
    require(k >= 1 && k <= op.dim(), ErrorCode::invalid_argument, "rank from top out of range",
            static_cast<double>(k));
    require(op.dim() <= kDenseThreshold, ErrorCode::invalid_size,
            "full diagonalisation limited to the dense threshold");
    const ComplexMatrix dense = op.to_dense();
    const auto es = hermitian_eigen_descending(dense);
    const Eigen::Index idx = static_cast<Eigen::Index>(k - 1);
    ComplexVector v = es.vectors.col(idx);
    detail::check_residual(op, v, es.values[idx]);
    if (energy)
        *energy = es.values[idx];
    return v;
}

/// |left> (x) |right> with the left factor on the low bits: index a + 2^M c.
inline ComplexVector product_state(const ComplexVector& left, const ComplexVector& right)
{
    ComplexVector out(left.size() * right.size());
    for (Eigen::Index c = 0; c < right.size(); ++c)
        out.segment(c * left.size(), left.size()) = left * right[c];
    return out;
}

/// Rank-1 jump operators Q_k = |0><k| in the eigenbasis of the two-site edge
/// Hamiltonian on sites M-2, M-1. The edge factor uses local index
/// e = bit(M-2) + 2 bit(M-1), so a global index is r + 2^{M-2} e.
struct JumpOperatorSet {
    int M = 2;
    Eigen::Matrix4d edge_hamiltonian;
    Eigen::Vector4d edge_eigenvalues; // ascending
    Eigen::Matrix4d edge_eigenvectors; // columns
    std::vector<int> levels;           // k of each operator
    std::vector<Eigen::Matrix4cd> edge_operators;
    int ground_index = 0;

    std::size_t size() const { return edge_operators.size(); }

    /// The k-th operator embedded as identity (x) Q on the 2^M space.
    Eigen::SparseMatrix<cplx> embedded(std::size_t j) const
    {
        const index_t rest = index_t{1} << (M - 2);
        const index_t dim = rest * 4;
        std::vector<Eigen::Triplet<cplx>> trip;
        for (int e = 0; e < 4; ++e)
            for (int f = 0; f < 4; ++f) {
                const cplx v = edge_operators[j](e, f);
                if (std::abs(v) < 1e-300)
                    continue;
                for (index_t r = 0; r < rest; ++r)
                    trip.emplace_back(static_cast<int>(r + rest * e), static_cast<int>(r + rest * f), v);
            }
        Eigen::SparseMatrix<cplx> m(dim, dim);
        m.setFromTriplets(trip.begin(), trip.end());
        return m;
    }
};

inline JumpOperatorSet build_jump_operators(const ModelParams& p)
{
    require(p.M >= 2, ErrorCode::invalid_size, "jump operators need M >= 2", p.M);
    // Edge bond coefficient is 1 regardless of J.
    ModelParams edge = p;
    edge.J = 1.0;
    const RealMatrix h = build_hamiltonian(edge, 2).to_dense_real();
    JumpOperatorSet out;
    out.M = p.M;
    out.edge_hamiltonian = h;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(out.edge_hamiltonian);
    out.edge_eigenvalues = es.eigenvalues();
    out.edge_eigenvectors = es.eigenvectors();
    for (int k = 0; k < 4; ++k) {
        Eigen::Vector4d col = out.edge_eigenvectors.col(k);
        fix_phase(col);
        out.edge_eigenvectors.col(k) = col;
    }
    const double gap = out.edge_eigenvalues[1] - out.edge_eigenvalues[0];
    require(gap > 1e-12, ErrorCode::degeneracy, "edge ground state is degenerate", gap);
    const Eigen::Vector4cd ground = out.edge_eigenvectors.col(0).cast<cplx>();
    for (int k = p.include_ground_jump ? 0 : 1; k < 4; ++k) {
        out.levels.push_back(k);
        out.edge_operators.push_back(ground * out.edge_eigenvectors.col(k).cast<cplx>().transpose());
    }
    return out;
}

} // namespace pagelab
