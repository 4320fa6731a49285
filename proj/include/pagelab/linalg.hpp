#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "pagelab/core.hpp"

namespace pagelab {

/// Make the first entry with |v_i| > tol real and positive.
template <typename Vec>
void fix_phase(Vec&& v, double tol = 1e-12)
{
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > tol) {
            if constexpr (std::is_same_v<typename std::decay_t<Vec>::Scalar, double>) {
                if (v[i] < 0)
                    v *= -1.0;
            } else {
                v *= std::conj(v[i]) / a;
            }
            return;
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue; ties keep the solver's
/// ascending order reversed stably. Eigenvector phases are normalised.
struct DescendingEigen {
    RealVector values;
    ComplexMatrix vectors;
};

inline DescendingEigen hermitian_eigen_descending(const ComplexMatrix& m, bool with_vectors = true)
{
    require(m.rows() == m.cols(), ErrorCode::dimension_mismatch, "matrix is not square");
    const Eigen::Index n = m.rows();
    DescendingEigen out;
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(
        m, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    require(es.info() == Eigen::Success, ErrorCode::numerical, "Hermitian eigensolver failed");
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return es.eigenvalues()[a] > es.eigenvalues()[b];
    });
    out.values.resize(n);
    if (with_vectors)
        out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values[k] = es.eigenvalues()[order[k]];
        if (with_vectors) {
            out.vectors.col(k) = es.eigenvectors().col(order[k]);
            fix_phase(out.vectors.col(k));
        }
    }
    return out;
}

struct RealEigen {
    RealVector values; // ascending
    RealMatrix vectors;
};

inline RealEigen symmetric_eigen(const RealMatrix& m)
{
    Eigen::SelfAdjointEigenSolver<RealMatrix> es(m);
    require(es.info() == Eigen::Success, ErrorCode::numerical, "symmetric eigensolver failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// Extremal eigenpair of a Hermitian operator by restarted Lanczos with full
/// reorthogonalisation. `Op` provides dim() and apply(const cplx*, cplx*).
struct LanczosResult {
    double eigenvalue = 0.0;
    ComplexVector vector;
    double residual = 0.0;
    int restarts = 0;
};

template <typename Op>
LanczosResult lanczos_extremal(const Op& op, bool largest, int basis_size = 60, int max_restarts = 200,
                               double tol = 1e-11, std::uint64_t seed = 0x5eed)
{
    const Eigen::Index n = static_cast<Eigen::Index>(op.dim());
    const int m = static_cast<int>(std::min<Eigen::Index>(basis_size, n));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    ComplexVector start(n);
    for (Eigen::Index i = 0; i < n; ++i)
        start[i] = cplx(nd(rng), nd(rng));
    start.normalize();

    ComplexMatrix basis(n, m);
    ComplexVector w(n);
    LanczosResult res;
    for (int restart = 0; restart <= max_restarts; ++restart) {
        std::vector<double> alpha, beta;
        basis.col(0) = start;
        int k = 0;
        for (; k < m; ++k) {
            op.apply(basis.col(k).data(), w.data());
            const double a = basis.col(k).dot(w).real();
            alpha.push_back(a);
            // full reorthogonalisation, twice for stability
            for (int pass = 0; pass < 2; ++pass)
                w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).adjoint() * w);
            const double b = w.norm();
            if (k + 1 == m || b < 1e-13) {
                ++k;
                break;
            }
            beta.push_back(b);
            basis.col(k + 1) = w / b;
        }
        RealMatrix t = RealMatrix::Zero(k, k);
        for (int i = 0; i < k; ++i) {
            t(i, i) = alpha[i];
            if (i + 1 < k)
                t(i, i + 1) = t(i + 1, i) = beta[i];
        }
        Eigen::SelfAdjointEigenSolver<RealMatrix> es(t);
        const Eigen::Index pick = largest ? k - 1 : 0;
        ComplexVector ritz = basis.leftCols(k) * es.eigenvectors().col(pick).cast<cplx>();
        ritz.normalize();
        op.apply(ritz.data(), w.data());
        const double theta = ritz.dot(w).real();
        res.eigenvalue = theta;
        res.residual = (w - theta * ritz).norm();
        res.vector = ritz;
        res.restarts = restart;
        if (res.residual <= tol)
            break;
        start = ritz;
    }
    fix_phase(res.vector);
    return res;
}

} // namespace pagelab
