#pragma once

// Independent brute-force reference implementations used by the tests.
// None of them share code paths with the library beyond Eigen itself.

#include <random>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pagelab/core.hpp"

namespace oracle {

using pagelab::cplx;
using pagelab::ComplexMatrix;
using pagelab::ComplexVector;

inline ComplexMatrix pauli(char which)
{
    ComplexMatrix m(2, 2);
    switch (which) {
    case 'x': m << 0, 1, 1, 0; break;
    case 'y': m << 0, cplx(0, -1), cplx(0, 1), 0; break;
    case 'z': m << 1, 0, 0, -1; break;
    default: m.setIdentity();
    }
    return m;
}

inline ComplexMatrix kron(const ComplexMatrix& a, const ComplexMatrix& b)
{
    ComplexMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return out;
}

/// Product of single-site operators; ops[i] acts on site i, which is bit i
/// of the basis index. The Kronecker product therefore runs from the highest
/// site down to site 0.
inline ComplexMatrix site_product(const std::vector<ComplexMatrix>& ops)
{
    ComplexMatrix out = ComplexMatrix::Identity(1, 1);
    for (auto it = ops.rbegin(); it != ops.rend(); ++it)
        out = kron(out, *it);
    return out;
}

inline ComplexMatrix local(int L, int site, char which)
{
    std::vector<ComplexMatrix> ops(L, pauli('i'));
    ops[site] = pauli(which);
    return site_product(ops);
}

inline ComplexMatrix two_site(int L, int i, char a, int j, char b)
{
    std::vector<ComplexMatrix> ops(L, pauli('i'));
    ops[i] = pauli(a);
    ops[j] = pauli(b);
    return site_product(ops);
}

inline ComplexMatrix ising(int L, double g, double h, double J)
{
    const Eigen::Index d = Eigen::Index{1} << L;
    ComplexMatrix H = ComplexMatrix::Zero(d, d);
    for (int i = 0; i < L; ++i)
        H += g * local(L, i, 'x') + h * local(L, i, 'z');
    for (int i = 0; i + 1 < L; ++i)
        H += J * two_site(L, i, 'z', i + 1, 'z');
    return H;
}

/// f(H) for Hermitian H by full diagonalisation.
template <typename F>
ComplexMatrix hermitian_function(const ComplexMatrix& H, F f)
{
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(H);
    Eigen::VectorXcd d(H.rows());
    for (Eigen::Index i = 0; i < H.rows(); ++i)
        d[i] = f(es.eigenvalues()[i]);
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().adjoint();
}

inline ComplexMatrix expm_minus_i(const ComplexMatrix& H, double t)
{
    return hermitian_function(H, [t](double e) { return std::exp(cplx(0, -t * e)); });
}

inline ComplexMatrix gibbs(const ComplexMatrix& H, double beta)
{
    ComplexMatrix r = hermitian_function(H, [beta](double e) { return cplx(std::exp(-beta * e), 0); });
    return r / r.trace();
}

/// d rho/dt = -i[H, rho] + gamma sum_k (L rho L^dag - {L^dag L, rho}/2) by classic RK4.
inline ComplexMatrix lindblad_rk4(const ComplexMatrix& H, const std::vector<ComplexMatrix>& jumps, double gamma,
                                  ComplexMatrix rho, double t, double h)
{
    ComplexMatrix sum = ComplexMatrix::Zero(H.rows(), H.cols());
    for (const auto& l : jumps)
        sum += l.adjoint() * l;
    const auto rhs = [&](const ComplexMatrix& r) {
        ComplexMatrix out = cplx(0, -1) * (H * r - r * H);
        for (const auto& l : jumps)
            out += gamma * (l * r * l.adjoint());
        out -= 0.5 * gamma * (sum * r + r * sum);
        return out;
    };
    const int n = static_cast<int>(std::llround(t / h));
    for (int s = 0; s < n; ++s) {
        const ComplexMatrix k1 = rhs(rho);
        const ComplexMatrix k2 = rhs(rho + 0.5 * h * k1);
        const ComplexMatrix k3 = rhs(rho + 0.5 * h * k2);
        const ComplexMatrix k4 = rhs(rho + h * k3);
        rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return rho;
}

/// rho_A[a][b] = sum_c psi[a + 2^M c] conj(psi[b + 2^M c]) by explicit loops.
inline ComplexMatrix partial_trace_loops(const ComplexVector& psi, int M, int N)
{
    const Eigen::Index da = Eigen::Index{1} << M, db = Eigen::Index{1} << N;
    ComplexMatrix r = ComplexMatrix::Zero(da, da);
    for (Eigen::Index a = 0; a < da; ++a)
        for (Eigen::Index b = 0; b < da; ++b)
            for (Eigen::Index c = 0; c < db; ++c)
                r(a, b) += psi[a + da * c] * std::conj(psi[b + da * c]);
    return r;
}

inline ComplexVector random_state(Eigen::Index dim, std::mt19937_64& rng)
{
    std::normal_distribution<double> nd;
    ComplexVector v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
        v[i] = cplx(nd(rng), nd(rng));
    return v.normalized();
}

inline ComplexMatrix random_density(Eigen::Index dim, std::mt19937_64& rng, int rank = -1)
{
    std::normal_distribution<double> nd;
    const Eigen::Index r = rank < 0 ? dim : rank;
    ComplexMatrix a(dim, r);
    for (Eigen::Index i = 0; i < dim; ++i)
        for (Eigen::Index j = 0; j < r; ++j)
            a(i, j) = cplx(nd(rng), nd(rng));
    ComplexMatrix rho = a * a.adjoint();
    return rho / rho.trace();
}

} // namespace oracle
