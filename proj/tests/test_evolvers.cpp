#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pagelab/krylov.hpp"
#include "pagelab/lattice.hpp"
#include "pagelab/lindblad.hpp"

using namespace pagelab;

namespace {

ComplexMatrix jump_matrix(const JumpOperatorSet& j, std::size_t k) { return ComplexMatrix(j.embedded(k)); }

std::vector<ComplexMatrix> all_jumps(const JumpOperatorSet& j)
{
    std::vector<ComplexMatrix> out;
    for (std::size_t k = 0; k < j.size(); ++k)
        out.push_back(jump_matrix(j, k));
    return out;
}

ComplexVector ceiling_state(const ModelParams& p, int L)
{
    return extremal_eigenstate(build_hamiltonian(p, L), Extremal::ceiling);
}

} // namespace

TEST(Krylov, ZeroTimeIsIdentity)
{
    std::mt19937_64 rng(1);
    const auto H = build_hamiltonian(ModelParams{}, 6);
    const ComplexVector v = oracle::random_state(64, rng);
    const ComplexVector out = krylov_evolve(H, v, 0.0);
    EXPECT_EQ((out - v).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Krylov, MatchesDenseExponentialAtEightSites)
{
    const ModelParams p;
    const auto H = build_hamiltonian(p, 8);
    std::mt19937_64 rng(2);
    const ComplexVector v = oracle::random_state(256, rng);
    KrylovStats st;
    const ComplexVector out = krylov_evolve(H, v, 1.0, KrylovConfig{}, &st);
    const ComplexVector ref = oracle::expm_minus_i(oracle::ising(8, p.g, p.h, p.J), 1.0) * v;
    EXPECT_GE(std::norm(ref.dot(out)), 1.0 - 1e-10);
    EXPECT_LE(st.norm_drift, 1e-10);
    EXPECT_FALSE(st.used_chebyshev);
    EXPECT_GE(st.substeps, 20);
}

TEST(Krylov, NegativeTimeInvertsForward)
{
    std::mt19937_64 rng(9);
    const auto H = build_hamiltonian(ModelParams{}, 7);
    const ComplexVector v = oracle::random_state(128, rng);
    const ComplexVector back = krylov_evolve(H, krylov_evolve(H, v, 0.7), -0.7);
    EXPECT_GE(std::norm(v.dot(back)), 1.0 - 1e-12);
}

TEST(Krylov, SmallKrylovDimensionSubdividesSteps)
{
    const ModelParams p;
    const auto H = build_hamiltonian(p, 6);
    std::mt19937_64 rng(4);
    const ComplexVector v = oracle::random_state(64, rng);
    KrylovConfig cfg;
    cfg.krylov_dim = 4;
    cfg.step_dt = 0.5;
    KrylovStats st;
    const ComplexVector out = krylov_evolve(H, v, 1.0, cfg, &st);
    const ComplexVector ref = oracle::expm_minus_i(H.to_dense(), 1.0) * v;
    EXPECT_GT(st.substeps, 2);
    EXPECT_LE(st.max_local_error, cfg.error_tol);
    EXPECT_GE(std::norm(ref.dot(out)), 1.0 - 1e-9);
}

TEST(Krylov, HappyBreakdownIsExact)
{
    // An eigenvector spans a one-dimensional Krylov space.
    const auto H = build_hamiltonian(ModelParams{}, 4);
    double e = 0.0;
    const ComplexVector v = extremal_eigenstate(H, Extremal::ground, &e);
    const ComplexVector out = krylov_evolve(H, v, 3.0);
    EXPECT_LT((out - std::exp(cplx(0, -3.0 * e)) * v).norm(), 1e-11);
}

TEST(Krylov, ChebyshevAgreesWithDense)
{
    const ModelParams p;
    const auto H = build_hamiltonian(p, 7);
    std::mt19937_64 rng(8);
    const ComplexVector v = oracle::random_state(128, rng);
    const auto b = estimate_spectral_bounds(H);
    const RealVector ev = Eigen::SelfAdjointEigenSolver<ComplexMatrix>(H.to_dense()).eigenvalues();
    EXPECT_LE(b.lo, ev.minCoeff());
    EXPECT_GE(b.hi, ev.maxCoeff());
    KrylovStats st;
    const ComplexVector out = chebyshev_evolve(H, v, 2.5, b, 1e-14, &st);
    const ComplexVector ref = oracle::expm_minus_i(H.to_dense(), 2.5) * v;
    EXPECT_GE(std::norm(ref.dot(out)), 1.0 - 1e-12);
    EXPECT_TRUE(st.used_chebyshev);
    // Forcing the memory budget to zero routes krylov_evolve to Chebyshev.
    KrylovConfig cfg;
    cfg.basis_memory_budget = 0.0;
    KrylovStats st2;
    const ComplexVector out2 = krylov_evolve(H, v, 2.5, cfg, &st2);
    EXPECT_TRUE(st2.used_chebyshev);
    EXPECT_GE(std::norm(ref.dot(out2)), 1.0 - 1e-12);
}

TEST(Krylov, EnergyConservedOnFullSystem)
{
    ModelParams p;
    const int M = 4, N = 6;
    const auto H = build_hamiltonian(p, M + N);
    const ComplexVector psi0 = product_state(ceiling_state(p, M), extremal_eigenstate(build_hamiltonian(p, N),
                                                                                      Extremal::ground));
    const double e0 = H.expectation(psi0).real();
    ComplexVector psi = psi0;
    for (int k = 0; k < 10; ++k) {
        psi = krylov_evolve(H, psi, 0.5);
        EXPECT_NEAR(H.expectation(psi).real(), e0, 1e-8);
    }
}

TEST(Krylov, RejectsBadInput)
{
    const auto H = build_hamiltonian(ModelParams{}, 3);
    ComplexVector v = ComplexVector::Ones(8);
    EXPECT_THROW(krylov_evolve(H, v, 1.0), Error);
    EXPECT_THROW(krylov_evolve(H, ComplexVector::Ones(4).normalized().eval(), 1.0), Error);
    KrylovConfig bad;
    bad.krylov_dim = 1;
    EXPECT_THROW(krylov_evolve(H, v.normalized().eval(), 1.0, bad), Error);
}

TEST(Kraus, NoDissipationIsIdentity)
{
    ModelParams p;
    p.M = 4;
    const auto ch = build_dissipative_kraus(build_jump_operators(p), 0.0, 0.2);
    ASSERT_EQ(ch.edge_kraus.size(), 1u);
    EXPECT_TRUE(ch.is_identity());
}

TEST(Kraus, CompletenessAndEmbedding)
{
    ModelParams p;
    p.M = 4;
    const auto jumps = build_jump_operators(p);
    const auto ch = build_dissipative_kraus(jumps, 1.0, 0.2);
    ASSERT_EQ(ch.edge_kraus.size(), 4u);
    EXPECT_LT((ch.completeness() - Eigen::Matrix4cd::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    ComplexMatrix sum = ComplexMatrix::Zero(16, 16);
    for (std::size_t j = 0; j < ch.edge_kraus.size(); ++j)
        sum += ch.embedded(j).adjoint() * ch.embedded(j);
    EXPECT_LT((sum - ComplexMatrix::Identity(16, 16)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kraus, ApplyMatchesExplicitKrausSum)
{
    ModelParams p;
    p.M = 5;
    const auto ch = build_dissipative_kraus(build_jump_operators(p), 0.7, 0.3);
    std::mt19937_64 rng(12);
    const ComplexMatrix rho = oracle::random_density(32, rng);
    ComplexMatrix ref = ComplexMatrix::Zero(32, 32);
    for (std::size_t j = 0; j < ch.edge_kraus.size(); ++j)
        ref += ch.embedded(j) * rho * ch.embedded(j).adjoint();
    EXPECT_LT((ch.apply(DensityMatrix(rho)).matrix - ref).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Kraus, EdgeGroundStateIsInvariant)
{
    ModelParams p;
    p.M = 4;
    const auto jumps = build_jump_operators(p);
    const auto ch = build_dissipative_kraus(jumps, 1.0, 0.2);
    std::mt19937_64 rng(13);
    const ComplexMatrix rest = oracle::random_density(4, rng);
    const Eigen::Vector4cd g0 = jumps.edge_eigenvectors.col(0).cast<cplx>();
    const ComplexMatrix rho = oracle::kron(g0 * g0.adjoint(), rest);
    EXPECT_LT((ch.apply(DensityMatrix(rho)).matrix - rho).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Kraus, StepTooLargeRejected)
{
    ModelParams p;
    p.M = 3;
    try {
        build_dissipative_kraus(build_jump_operators(p), 6.0, 0.2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::step_too_large);
    }
}

TEST(Lindblad, UnitaryLimitPreservesPurity)
{
    ModelParams p;
    p.M = 5;
    p.gamma = 0.0;
    const LindbladIntegrator integ(p);
    std::mt19937_64 rng(14);
    const ComplexVector psi = oracle::random_state(32, rng);
    DensityMatrix rho = DensityMatrix::pure(psi);
    for (int s = 0; s < 10; ++s)
        rho = integ.step(rho);
    EXPECT_NEAR(rho.purity(), 1.0, 1e-10);
    const ComplexVector v = krylov_evolve(integ.hamiltonian(), psi, 2.0);
    EXPECT_GE((v.adjoint() * rho.matrix * v)(0, 0).real(), 1.0 - 1e-9);
    const DensityMatrix mixed = DensityMatrix::maximally_mixed(32);
    EXPECT_LT((integ.step(mixed).matrix - mixed.matrix).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Lindblad, PureStateMatchesKrylovAtSixSites)
{
    ModelParams p;
    p.M = 6;
    p.gamma = 0.0;
    const LindbladIntegrator integ(p);
    const ComplexVector psi = ceiling_state(p, 6);
    DensityMatrix rho = DensityMatrix::pure(psi);
    for (int s = 0; s < 25; ++s)
        rho = integ.step(rho);
    const ComplexVector v = krylov_evolve(integ.hamiltonian(), psi, 5.0);
    EXPECT_GE((v.adjoint() * rho.matrix * v)(0, 0).real(), 1.0 - 1e-9);
}

TEST(Lindblad, ChebyshevPathMatchesDensePath)
{
    ModelParams p;
    p.M = 5;
    const LindbladIntegrator dense(p);
    const LindbladIntegrator matrix_free(p, Splitting::first_order, 1);
    ASSERT_TRUE(dense.unitary().dense());
    ASSERT_FALSE(matrix_free.unitary().dense());
    std::mt19937_64 rng(15);
    DensityMatrix a(oracle::random_density(32, rng));
    DensityMatrix b = a;
    for (int s = 0; s < 5; ++s) {
        a = dense.step(a);
        b = matrix_free.step(b);
    }
    EXPECT_LT((a.matrix - b.matrix).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lindblad, InvariantsAlongTrajectory)
{
    ModelParams p;
    p.M = 4;
    const LindbladIntegrator integ(p);
    DensityMatrix rho = DensityMatrix::pure(ceiling_state(p, 4));
    for (int s = 0; s < 200; ++s) {
        rho = integ.step(rho);
        const auto d = diagnose(rho);
        ASSERT_LE(d.trace_defect, 1e-10);
        ASSERT_LE(d.hermiticity_defect, 1e-10);
        ASSERT_GE(d.min_eigenvalue, -1e-9);
    }
}

TEST(Lindblad, OneStepAgainstRungeKutta)
{
    ModelParams p;
    p.M = 4;
    const LindbladIntegrator integ(p);
    const auto jumps = all_jumps(integ.jumps());
    const ComplexMatrix H = integ.hamiltonian().to_dense();
    const ComplexMatrix rho0 = DensityMatrix::pure(ceiling_state(p, 4)).matrix;
    // The local splitting error is second order in dt.
    double prev = 0.0;
    for (double dt : {0.2, 0.1, 0.05}) {
        ModelParams q = p;
        q.dt = dt;
        const LindbladIntegrator step(q);
        const ComplexMatrix a = step.step(DensityMatrix(rho0)).matrix;
        const ComplexMatrix ref = oracle::lindblad_rk4(H, jumps, 1.0, rho0, dt, 1e-4);
        const double err = (a - ref).cwiseAbs().maxCoeff();
        EXPECT_LT(err, 0.05 * dt * dt * 10);
        if (prev > 0.0) {
            EXPECT_GT(prev / err, 3.0);
            EXPECT_LT(prev / err, 5.0);
        }
        prev = err;
    }
}

TEST(Lindblad, GlobalErrorIsFirstOrderForBothSplittings)
{
    // The jump part of the channel is itself first order in gamma dt, so
    // symmetrising the unitary half-steps cannot raise the global order.
    // Strang must still converge and must not be less accurate.
    ModelParams p;
    p.M = 3;
    const LindbladIntegrator integ(p);
    const auto jumps = all_jumps(integ.jumps());
    const ComplexMatrix H = integ.hamiltonian().to_dense();
    const ComplexMatrix rho0 = DensityMatrix::pure(ceiling_state(p, 3)).matrix;
    const ComplexMatrix ref = oracle::lindblad_rk4(H, jumps, 1.0, rho0, 2.0, 1e-4);
    for (auto split : {Splitting::first_order, Splitting::strang}) {
        double prev = 0.0;
        for (double dt : {0.2, 0.1, 0.05}) {
            ModelParams q = p;
            q.dt = dt;
            const LindbladIntegrator run(q, split);
            DensityMatrix rho(rho0);
            for (int s = 0; s < static_cast<int>(std::lround(2.0 / dt)); ++s)
                rho = run.step(rho);
            const double err = (rho.matrix - ref).cwiseAbs().maxCoeff();
            if (prev > 0.0) {
                EXPECT_GT(prev / err, 1.5);
                EXPECT_LT(prev / err, 2.5);
            }
            prev = err;
        }
    }
}

TEST(Lindblad, PartialStepInterpolates)
{
    ModelParams p;
    p.M = 4;
    const LindbladIntegrator integ(p);
    const DensityMatrix rho = DensityMatrix::pure(ceiling_state(p, 4));
    EXPECT_EQ((integ.partial_step(rho, 0.0).matrix - rho.matrix).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LT((integ.partial_step(rho, 0.2).matrix - integ.step(rho).matrix).cwiseAbs().maxCoeff(), 1e-15);
    const auto half = integ.partial_step(rho, 0.1);
    EXPECT_LE(diagnose(half).trace_defect, 1e-12);
}

TEST(Lindblad, PositivityCheckRaisesIntegrationError)
{
    ModelParams p;
    p.M = 3;
    const LindbladIntegrator integ(p);
    // A non-positive input is carried through the step and detected.
    ComplexMatrix bad = ComplexMatrix::Identity(8, 8) / 8.0;
    bad(0, 0) -= 0.3;
    bad(1, 1) += 0.3;
    try {
        lindblad_step(DensityMatrix(bad), integ.unitary(), integ.channel(), Splitting::first_order, true);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::integration);
    }
}
