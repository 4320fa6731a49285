#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pagelab/entanglement.hpp"
#include "pagelab/hydro.hpp"
#include "pagelab/trajectory.hpp"

using namespace pagelab;

namespace {

const std::vector<double> kAlphas = {0.5, 1.0, 2.0, 3.0, kInfinity};

/// Density matrix with the given spectrum in a random orthonormal basis.
DensityMatrix with_spectrum(const std::vector<double>& lambda, std::mt19937_64& rng)
{
    const Eigen::Index d = static_cast<Eigen::Index>(lambda.size());
    const ComplexMatrix q = Eigen::HouseholderQR<ComplexMatrix>(oracle::random_density(d, rng)).householderQ();
    RealVector l(d);
    for (Eigen::Index i = 0; i < d; ++i)
        l[i] = lambda[i];
    return DensityMatrix(q * l.cast<cplx>().asDiagonal() * q.adjoint());
}

/// Snapshot whose top two eigenvalues follow a two-level avoided crossing:
/// rho = exp(-H_A)/Z with H_A eigenvalues -E/2, +E/2 and
/// E(t) = sqrt(c^2 (t - t0)^2 + delta^2), so log lambda_0 - log lambda_1 = E.
struct LandauZener {
    double c = 1.5, t0 = 5.0, delta = 0.3;

    double gap(double t) const { return std::hypot(c * (t - t0), delta); }

    EntanglementSnapshot at(double t) const
    {
        // Eigenvectors rotate through the crossing like the adiabatic states.
        const double theta = 0.5 * std::atan2(delta, c * (t - t0));
        ComplexMatrix v(2, 2);
        v << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
        const double e = gap(t);
        RealVector p(2);
        p << 1.0 / (1.0 + std::exp(-e)), std::exp(-e) / (1.0 + std::exp(-e));
        return entanglement_snapshot(DensityMatrix(v * p.cast<cplx>().asDiagonal() * v.adjoint()), t,
                                     {1.0, kInfinity});
    }
};

} // namespace

TEST(PartialTrace, ProductStateIsPure)
{
    std::mt19937_64 rng(21);
    const ComplexVector a = oracle::random_state(8, rng), b = oracle::random_state(16, rng);
    const DensityMatrix rho = partial_trace(product_state(a, b), 3, 4);
    EXPECT_LT((rho.matrix - a * a.adjoint()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(entanglement_snapshot(rho, 0, {1.0}).entropy(1.0), 0.0, 1e-12);
}

TEST(PartialTrace, BellPairIsMaximallyMixed)
{
    ComplexVector bell = ComplexVector::Zero(4);
    bell[0] = bell[3] = 1.0 / std::sqrt(2.0);
    const DensityMatrix rho = partial_trace(bell, 1, 1);
    EXPECT_LT((rho.matrix - 0.5 * ComplexMatrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PartialTrace, MatchesLoopOracle)
{
    std::mt19937_64 rng(22);
    int cases = 0;
    for (int L = 2; L <= 10; ++L)
        for (int M = 1; M < L; ++M) {
            const ComplexVector psi = oracle::random_state(Eigen::Index{1} << L, rng);
            const ComplexMatrix ref = oracle::partial_trace_loops(psi, M, L - M);
            const DensityMatrix rho = partial_trace(psi, M, L - M);
            ASSERT_LT((rho.matrix - ref).cwiseAbs().maxCoeff(), 1e-14) << L << " " << M;
            ++cases;
        }
    EXPECT_GT(cases, 40);
    EXPECT_THROW(partial_trace(ComplexVector::Ones(8), 2, 2), Error);
}

TEST(Snapshot, FlatAndPureSpectra)
{
    for (int M : {1, 3, 5}) {
        const auto s = entanglement_snapshot(DensityMatrix::maximally_mixed(index_t{1} << M), 0, kAlphas);
        for (double a : kAlphas)
            EXPECT_NEAR(s.entropy(a), M * std::log(2.0), 1e-12);
    }
    std::mt19937_64 rng(23);
    const auto pure = entanglement_snapshot(DensityMatrix::pure(oracle::random_state(16, rng)), 0, kAlphas);
    for (double a : kAlphas)
        EXPECT_NEAR(pure.entropy(a), 0.0, 1e-12);
}

TEST(Snapshot, ArithmeticOracle)
{
    std::mt19937_64 rng(24);
    const auto s = entanglement_snapshot(with_spectrum({0.2, 0.5, 0.3}, rng), 1.5, kAlphas);
    EXPECT_NEAR(s.entropy(2.0), -std::log(0.38), 1e-12);
    EXPECT_EQ(s.entropy(kInfinity), -std::log(s.eigenvalues[0]));
    EXPECT_NEAR(s.entropy(kInfinity), -std::log(0.5), 1e-12);
    EXPECT_NEAR(s.entropy(1.0), -(0.5 * std::log(0.5) + 0.3 * std::log(0.3) + 0.2 * std::log(0.2)), 1e-12);
    EXPECT_DOUBLE_EQ(s.time, 1.5);
    EXPECT_THROW(s.entropy(7.0), Error);
}

TEST(Snapshot, InvariantsOnRandomStates)
{
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index d = Eigen::Index{1} << (1 + trial % 5);
        const int rank = 1 + static_cast<int>(rng() % d);
        const auto s = entanglement_snapshot(DensityMatrix(oracle::random_density(d, rng, rank)), 0, kAlphas);
        ASSERT_NEAR(s.eigenvalues.sum(), 1.0, 1e-9);
        ASSERT_GE(s.eigenvalues.minCoeff(), 0.0);
        for (Eigen::Index i = 1; i < d; ++i)
            ASSERT_GE(s.eigenvalues[i - 1], s.eigenvalues[i]);
        const ComplexMatrix gram = s.eigenvectors.adjoint() * s.eigenvectors;
        ASSERT_LT((gram - ComplexMatrix::Identity(d, d)).cwiseAbs().maxCoeff(), 1e-9);
        for (std::size_t k = 1; k < kAlphas.size(); ++k)
            ASSERT_GE(s.entropies[k - 1] + 1e-12, s.entropies[k]);
    }
}

TEST(Snapshot, KeepsRequestedVectors)
{
    std::mt19937_64 rng(26);
    const auto s = entanglement_snapshot(DensityMatrix(oracle::random_density(8, rng)), 0, {1.0}, 2);
    EXPECT_EQ(s.eigenvectors.cols(), 2);
    const auto none = entanglement_snapshot(DensityMatrix(oracle::random_density(8, rng)), 0, {1.0}, 0);
    EXPECT_EQ(none.eigenvectors.cols(), 0);
    EXPECT_THROW(entanglement_snapshot(DensityMatrix::maximally_mixed(2), 0, {-1.0}), Error);
}

TEST(Bhattacharyya, Examples)
{
    ComplexVector v(2), w(2);
    v << 1.0 / std::sqrt(2.0), cplx(0, 1) / std::sqrt(2.0);
    w << 1, 0;
    EXPECT_NEAR(bhattacharyya_overlap(v, v), 1.0, 1e-15);
    EXPECT_NEAR(bhattacharyya_overlap(v, w), std::sqrt(0.5), 1e-15);
    ComplexVector a(4), b(4);
    a << 1, 0, 0, 0;
    b << 0, 0, 1, 0;
    EXPECT_EQ(bhattacharyya_overlap(a, b), 0.0);
}

TEST(OverlapMatrix, SingleAndStationary)
{
    std::mt19937_64 rng(27);
    const DensityMatrix rho(oracle::random_density(8, rng));
    const std::vector<EntanglementSnapshot> one = {entanglement_snapshot(rho, 0, {1.0})};
    EXPECT_EQ(overlap_matrix(one).size(), 1);
    EXPECT_EQ(overlap_matrix(one)(0, 0), 1.0);
    std::vector<EntanglementSnapshot> many;
    for (int k = 0; k < 5; ++k)
        many.push_back(entanglement_snapshot(rho, k, {1.0}));
    const RealMatrix b = overlap_matrix(many);
    EXPECT_LT((b - RealMatrix::Ones(5, 5)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((b - b.transpose()).cwiseAbs().maxCoeff(), 0.0 + 1e-300);
}

TEST(LevelTracking, FollowsEigenvectorsThroughReordering)
{
    // Two snapshots whose top two eigenvectors swap order.
    ComplexMatrix v = ComplexMatrix::Identity(3, 3);
    std::vector<EntanglementSnapshot> series(2);
    series[0].eigenvectors = v;
    series[1].eigenvectors = v;
    series[1].eigenvectors.col(0) = v.col(1);
    series[1].eigenvectors.col(1) = v.col(0);
    const auto lab = track_levels(series);
    EXPECT_EQ(lab[1][0], 1);
    EXPECT_EQ(lab[1][1], 0);
    EXPECT_EQ(lab[1][2], 2);
}

TEST(Crossings, MonotoneSeparationHasNone)
{
    std::vector<EntanglementSnapshot> series;
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.5 * k;
        const double l0 = 0.6 + 0.01 * t, l1 = 0.3 - 0.01 * t;
        series.push_back(entanglement_snapshot(
            DensityMatrix(RealVector((RealVector(3) << l0, l1, 1.0 - l0 - l1).finished()).cast<cplx>().asDiagonal()),
            t, {1.0}));
    }
    EXPECT_TRUE(detect_crossings(series).empty());
}

TEST(Crossings, LandauZenerRefinement)
{
    const LandauZener lz;
    std::vector<EntanglementSnapshot> series;
    for (int k = 0; k <= 50; ++k)
        series.push_back(lz.at(0.2 * k + 0.07));
    CrossingOptions opt;
    const auto unrefined = detect_crossings(series, opt);
    ASSERT_EQ(unrefined.size(), 1u);
    EXPECT_EQ(unrefined[0].flag, "unrefined");
    EXPECT_NEAR(unrefined[0].t_star, 5.0, 0.2);

    const auto events = detect_crossings(series, opt, [&](std::size_t) { return GapProbe([&](double t) { return lz.gap(t); }); });
    ASSERT_EQ(events.size(), 1u);
    EXPECT_EQ(events[0].flag, "refined");
    EXPECT_NEAR(events[0].t_star, 5.0, opt.refine_tol);
    EXPECT_NEAR(events[0].min_gap, lz.delta, 1e-6);
    EXPECT_EQ(events[0].level_pair(), "0-1");
    // The top eigenvector changes character across the event.
    EXPECT_GT(events[0].bhattacharyya_jump, 0.0);
    EXPECT_LT(events[0].overlap_across, events[0].overlap_before);
}

TEST(Crossings, ProminenceFiltersWiggles)
{
    std::vector<EntanglementSnapshot> series;
    for (int k = 0; k <= 40; ++k) {
        const double t = 0.25 * k;
        const double gap = 2.0 + 0.1 * std::sin(3.0 * t); // wiggles of 0.2 nats
        const double l1 = 1.0 / (1.0 + std::exp(gap));
        series.push_back(entanglement_snapshot(
            DensityMatrix(RealVector((RealVector(2) << 1.0 - l1, l1).finished()).cast<cplx>().asDiagonal()), t,
            {1.0}));
    }
    EXPECT_TRUE(detect_crossings(series).empty());
    CrossingOptions loose;
    loose.prominence = 0.1;
    EXPECT_FALSE(detect_crossings(series, loose).empty());
}

TEST(Crossings, ProbeAtBracketEdgeIsFlagged)
{
    const LandauZener lz;
    std::vector<EntanglementSnapshot> series;
    for (int k = 0; k <= 50; ++k)
        series.push_back(lz.at(0.2 * k));
    // A probe whose minimum lies outside the bracket cannot be refined.
    const auto events =
        detect_crossings(series, {}, [&](std::size_t) { return GapProbe([](double t) { return t; }); });
    ASSERT_EQ(events.size(), 1u);
    EXPECT_EQ(events[0].flag, "boundary");
}

TEST(PageTime, QuadraticAndEndpoint)
{
    std::vector<double> t, s;
    for (int k = 0; k <= 12; ++k) {
        t.push_back(k);
        s.push_back(-(k - 7.0) * (k - 7.0) + 3.0);
    }
    EXPECT_DOUBLE_EQ(page_time_detail(t, s).time, 7.0);
    std::vector<double> t2, s2;
    for (int k = 0; k <= 12; ++k) {
        t2.push_back(k);
        s2.push_back(-(k - 6.6) * (k - 6.6));
    }
    EXPECT_NEAR(page_time_detail(t2, s2).time, 6.6, 1e-12);
    std::vector<double> mono = t;
    try {
        page_time_detail(t, mono);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::not_converged);
    }
}

TEST(GapScaling, ExactExponentialAndConstant)
{
    const auto r = gap_scaling({{4, {1.0, std::exp(-4.0)}}, {6, {1.0, std::exp(-6.0)}}, {8, {1.0, std::exp(-8.0)}}});
    ASSERT_TRUE(r.page.exponential);
    EXPECT_NEAR(r.page.exponential->slope, -1.0, 1e-12);
    EXPECT_NEAR(r.page.exponential->slope_se, 0.0, 1e-7);
    ASSERT_TRUE(r.first.exponential);
    EXPECT_NEAR(r.first.exponential->slope, 0.0, 1e-15);
    EXPECT_TRUE(r.page.power_law.has_value());
}

TEST(GapScaling, NeedsThreeSizesAndExcludesNonpositive)
{
    const auto two = gap_scaling({{4, {1.0, 0.5}}, {6, {1.0, 0.2}}});
    EXPECT_FALSE(two.page.exponential);
    const auto bad = gap_scaling({{4, {1.0, 0.5}}, {6, {1.0, 0.0}}, {8, {1.0, 0.1}}, {10, {1.0, 0.05}}});
    ASSERT_EQ(bad.excluded.size(), 1u);
    EXPECT_EQ(bad.excluded[0], "page M=6");
    ASSERT_TRUE(bad.page.exponential);
    EXPECT_EQ(bad.page.exponential->points, 3u);
}

TEST(Ipr, Definitions)
{
    std::mt19937_64 rng(28);
    const DensityMatrix rho(oracle::random_density(8, rng));
    const auto s = entanglement_snapshot(rho, 0, {1.0});
    EXPECT_NEAR(ipr_row(s, s.eigenvectors.col(3)).ipr, 1.0, 1e-12);
    const ComplexVector spread = (s.eigenvectors.col(0) + s.eigenvectors.col(1) + s.eigenvectors.col(2) +
                                  s.eigenvectors.col(5)) /
                                 2.0;
    const auto row = ipr_row(s, spread);
    EXPECT_NEAR(row.ipr, 0.25, 1e-12);
    EXPECT_NEAR(row.magnitudes.squaredNorm(), 1.0, 1e-12);
    EXPECT_EQ(ipr_diagnostic({s, s}, spread).size(), 2u);
}

TEST(Trajectory, GridValidation)
{
    const auto g = make_grid(2.0, 0.2);
    EXPECT_EQ(g.count, 11u);
    EXPECT_DOUBLE_EQ(g.time(10), 2.0);
    EXPECT_THROW(make_grid(1.0, 0.3), Error);
    EXPECT_THROW(steps_per_sample(0.3, 0.2), Error);
    EXPECT_EQ(steps_per_sample(0.6, 0.2), 3);
}

TEST(Trajectory, FullSystemStartsUnentangled)
{
    ModelParams p;
    p.M = 3;
    p.N = 4;
    const auto psi = full_system_initial_state(p);
    const auto zero = evolve_trajectory(psi, p, 0.0, 0.5);
    ASSERT_EQ(zero.size(), 1u);
    EXPECT_NEAR(entanglement_snapshot(zero[0].rho, 0, {1.0}).entropy(1.0), 0.0, 1e-12);
    const auto series = evolve_trajectory(psi, p, 2.0, 0.5);
    ASSERT_EQ(series.size(), 5u);
    EXPECT_GT(entanglement_snapshot(series.back().rho, 0, {1.0}).entropy(1.0), 0.05);
}

TEST(Trajectory, LindbladZeroTimeAndApproachToLowEnergy)
{
    ModelParams p;
    p.M = 4;
    const DensityMatrix rho0 = lindblad_initial_state(p);
    const auto zero = evolve_trajectory(rho0, p, 0.0, 0.2);
    ASSERT_EQ(zero.size(), 1u);
    EXPECT_LT((zero[0].rho.matrix - rho0.matrix).cwiseAbs().maxCoeff(), 0.0 + 1e-300);
    const auto series = evolve_trajectory(rho0, p, 80.0, 2.0);
    const auto H = build_hamiltonian(p, 4);
    std::vector<double> e;
    for (const auto& s : series)
        e.push_back(H.expectation(s.rho.matrix).real());
    // Energy falls from the ceiling and settles: late-time changes are small.
    EXPECT_LT(e.back(), e.front() - 3.0);
    EXPECT_LT(std::abs(e.back() - e[e.size() - 2]), 1e-4);
}

TEST(Trajectory, HalvingDtConvergesAtFirstOrder)
{
    ModelParams p;
    p.M = 4;
    const DensityMatrix rho0 = lindblad_initial_state(p);
    std::vector<double> s1;
    for (double dt : {0.2, 0.1, 0.05, 0.025}) {
        ModelParams q = p;
        q.dt = dt;
        const auto series = evolve_trajectory(rho0, q, 4.0, 4.0);
        s1.push_back(entanglement_snapshot(series.back().rho, 4.0, {1.0}).entropy(1.0));
    }
    // Successive differences shrink by a factor close to two.
    const double r1 = (s1[0] - s1[1]) / (s1[1] - s1[2]);
    const double r2 = (s1[1] - s1[2]) / (s1[2] - s1[3]);
    EXPECT_GE(r1, 1.5);
    EXPECT_LE(r1, 2.5);
    EXPECT_GE(r2, 1.5);
    EXPECT_LE(r2, 2.5);
}

TEST(NelderMead, Rosenbrock)
{
    const auto f = [](const RealVector& x) {
        return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
    };
    NelderMeadOptions opt;
    const auto r = nelder_mead(f, (RealVector(2) << -1.2, 1.0).finished(), opt);
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.x[0], 1.0, 1e-4);
    EXPECT_NEAR(r.x[1], 1.0, 1e-4);
    for (std::size_t k = 1; k < r.history.size(); ++k)
        ASSERT_LE(r.history[k], r.history[k - 1]);
}

TEST(Ansatz, ZeroProfileIsMaximallyMixed)
{
    ModelParams p;
    p.M = 4;
    const auto rho = build_ansatz_density(BetaProfile::uniform(4, 0.0, true), p);
    EXPECT_LT((rho.matrix - ComplexMatrix::Identity(16, 16) / 16.0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ansatz, UniformBetaIsGibbs)
{
    ModelParams p;
    p.M = 5;
    for (double beta : {-1.3, 0.3, 2.0}) {
        const auto rho = build_ansatz_density(BetaProfile::uniform(5, beta, false), p);
        const ComplexMatrix ref = oracle::gibbs(oracle::ising(5, p.g, p.h, p.J), beta);
        EXPECT_LT((rho.matrix - ref).cwiseAbs().maxCoeff(), 1e-12);
        const auto d = diagnose(rho);
        EXPECT_LT(d.trace_defect, 1e-12);
        EXPECT_GE(d.min_eigenvalue, -1e-15);
    }
}

TEST(Ansatz, SpectralShiftHandlesLargeBeta)
{
    ModelParams p;
    p.M = 4;
    const auto rho = build_ansatz_density(BetaProfile::uniform(4, 500.0, true), p);
    EXPECT_TRUE(rho.matrix.allFinite());
    EXPECT_NEAR(rho.trace().real(), 1.0, 1e-12);
}

TEST(Ansatz, SpinFlipCovariance)
{
    // Conjugating by X_0 flips Z_0: the ansatz with h -> -h on site 0 and
    // the bond and current on (0,1) negated equals X_0 rho X_0.
    ModelParams p;
    p.M = 3;
    BetaProfile prof = BetaProfile::uniform(3, 0.0, true);
    prof.beta_site = {0.4, -0.7, 0.2};
    prof.beta_bond = {0.9, -0.3};
    prof.current_zx = {0.5, 0.1};
    const ComplexMatrix x0 = oracle::local(3, 0, 'x');
    const ComplexMatrix flipped = x0 * build_ansatz_density(prof, p).matrix * x0;
    // Build the transformed generator directly with the dense oracle.
    ComplexMatrix k = ComplexMatrix::Zero(8, 8);
    for (int i = 0; i < 3; ++i) {
        const double sz = i == 0 ? -1.0 : 1.0;
        k += prof.beta_site[i] * (p.g * oracle::local(3, i, 'x') + sz * p.h * oracle::local(3, i, 'z'));
    }
    k += -prof.beta_bond[0] * p.J * oracle::two_site(3, 0, 'z', 1, 'z');
    k += prof.beta_bond[1] * p.J * oracle::two_site(3, 1, 'z', 2, 'z');
    k += -prof.current_zx[0] * oracle::two_site(3, 0, 'z', 1, 'x');
    k += prof.current_zx[1] * oracle::two_site(3, 1, 'z', 2, 'x');
    const ComplexMatrix ref = oracle::gibbs(k, 1.0);
    EXPECT_LT((flipped - ref).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Fit, MaximallyMixedGivesZero)
{
    ModelParams p;
    p.M = 4;
    const auto prof = fit_beta_profile(DensityMatrix::maximally_mixed(16), p, true);
    EXPECT_TRUE(prof.converged);
    EXPECT_LT(prof.parameters().cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT(prof.loss, 1e-20);
}

TEST(Fit, GibbsStateRecoversBeta)
{
    ModelParams p;
    p.M = 5;
    const DensityMatrix rho(oracle::gibbs(oracle::ising(5, p.g, p.h, p.J), 0.3));
    for (bool cur : {false, true}) {
        const auto prof = fit_beta_profile(rho, p, cur);
        EXPECT_TRUE(prof.converged);
        for (double b : prof.beta_site)
            EXPECT_NEAR(b, 0.3, 1e-6);
        for (double b : prof.beta_bond)
            EXPECT_NEAR(b, 0.3, 1e-6);
        for (double c : prof.current_zx)
            EXPECT_NEAR(c, 0.0, 1e-6);
        EXPECT_LT(prof.loss_h, 1e-16);
        EXPECT_LT(prof.relative_entropy, 1e-8);
    }
}

TEST(Fit, CeilingStateHasNegativeBetas)
{
    ModelParams p;
    p.M = 4;
    const auto prof = fit_beta_profile(lindblad_initial_state(p), p, false);
    for (double b : prof.beta_site)
        EXPECT_LT(b, 0.0);
}

TEST(Fit, LossNeverIncreases)
{
    ModelParams p;
    p.M = 4;
    std::mt19937_64 rng(29);
    for (auto optimizer : {FitOptimizer::newton, FitOptimizer::nelder_mead}) {
        FitOptions opt;
        opt.optimizer = optimizer;
        opt.nelder_mead.max_iterations = 3000;
        std::vector<double> hist;
        opt.on_iteration = [&](double l) { hist.push_back(l); };
        fit_beta_profile(DensityMatrix(oracle::random_density(16, rng)), p, true, nullptr, opt);
        ASSERT_FALSE(hist.empty());
        for (std::size_t k = 1; k < hist.size(); ++k)
            ASSERT_LE(hist[k], hist[k - 1]);
    }
}

TEST(Fit, NelderMeadRecoversSmallProfile)
{
    ModelParams p;
    p.M = 3;
    BetaProfile truth = BetaProfile::uniform(3, 0.0, false);
    truth.beta_site = {0.5, -0.2, 0.8};
    truth.beta_bond = {0.1, 0.4};
    FitOptions opt;
    opt.optimizer = FitOptimizer::nelder_mead;
    const auto prof = fit_beta_profile(build_ansatz_density(truth, p), p, false, nullptr, opt);
    EXPECT_LT((prof.parameters() - truth.parameters()).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Fit, RoundTripWithCurrents)
{
    ModelParams p;
    p.M = 5;
    std::mt19937_64 rng(30);
    std::uniform_real_distribution<double> beta(-2.0, 2.0), cur(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        BetaProfile truth = BetaProfile::uniform(5, 0.0, true);
        for (auto& b : truth.beta_site)
            b = beta(rng);
        for (auto& b : truth.beta_bond)
            b = beta(rng);
        for (auto& c : truth.current_zx)
            c = cur(rng);
        const auto prof = fit_beta_profile(build_ansatz_density(truth, p), p, true);
        EXPECT_LT((prof.parameters() - truth.parameters()).cwiseAbs().maxCoeff(), 1e-4) << "trial " << trial;
    }
}

TEST(Fit, CurrentsNeverWorsenRelativeEntropy)
{
    ModelParams p;
    p.M = 4;
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const DensityMatrix rho(oracle::random_density(16, rng));
        const auto a = fit_beta_profile(rho, p, false);
        const auto b = fit_beta_profile(rho, p, true);
        EXPECT_LE(b.relative_entropy, a.relative_entropy + 1e-10);
    }
}

TEST(Fit, TrajectoryIsWarmStartedAndStationary)
{
    ModelParams p;
    p.M = 4;
    const DensityMatrix rho(oracle::gibbs(oracle::ising(4, p.g, p.h, p.J), 0.7));
    const std::vector<TimedDensity> series = {{0.0, rho}, {0.2, rho}, {0.4, rho}};
    const auto profs = fit_trajectory(series, p, false);
    ASSERT_EQ(profs.size(), 3u);
    EXPECT_DOUBLE_EQ(profs[2].time, 0.4);
    EXPECT_LT((profs[2].parameters() - profs[0].parameters()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(profs[1].iterations, profs[0].iterations);
}

TEST(Reconstruct, GibbsAndZeroProfiles)
{
    ModelParams p;
    p.M = 4;
    const DensityMatrix rho(oracle::gibbs(oracle::ising(4, p.g, p.h, p.J), -0.4));
    const auto prof = fit_beta_profile(rho, p, false);
    const auto rec = reconstruct_entropies({prof}, p, kAlphas);
    const auto direct = entanglement_snapshot(rho, 0, kAlphas);
    for (double a : kAlphas)
        EXPECT_NEAR(rec[0].entropy(a), direct.entropy(a), 1e-8);
    const auto flat = reconstruct_entropies({BetaProfile::uniform(4, 0.0, false)}, p, kAlphas);
    for (double a : kAlphas)
        EXPECT_NEAR(flat[0].entropy(a), 4 * std::log(2.0), 1e-12);
}

TEST(EnergyProfiles, GroundStateAndMixed)
{
    ModelParams p;
    p.M = 5;
    double e0 = 0.0;
    const auto H = build_hamiltonian(p, 5);
    const ComplexVector gs = extremal_eigenstate(H, Extremal::ground, &e0);
    const auto snap = entanglement_snapshot(DensityMatrix::pure(gs), 0, {1.0});
    const auto profs = energy_profiles(snap, DensityMatrix::pure(gs), p, {0});
    ASSERT_EQ(profs.size(), 2u);
    double sum = 0.0;
    for (double e : profs[0].per_site_total)
        sum += e;
    EXPECT_NEAR(sum, e0, 1e-12);
    const EnergyProfiler prof(p);
    const auto mixed = prof.of_density(DensityMatrix::maximally_mixed(32), 0);
    for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(mixed.per_site_bond[i], 0.0, 1e-15);
        EXPECT_NEAR(mixed.per_site_field[i], 0.0, 1e-15);
    }
}

TEST(EnergyProfiles, MatchDenseOracle)
{
    ModelParams p;
    p.M = 4;
    std::mt19937_64 rng(32);
    const ComplexVector v = oracle::random_state(16, rng);
    const auto e = EnergyProfiler(p).of_state(v, 0, 0);
    for (int i = 0; i < 4; ++i) {
        const ComplexMatrix f = p.g * oracle::local(4, i, 'x') + p.h * oracle::local(4, i, 'z');
        EXPECT_NEAR(e.per_site_field[i], (v.adjoint() * f * v)(0, 0).real(), 1e-12);
        if (i < 3) {
            const ComplexMatrix b = p.J * oracle::two_site(4, i, 'z', i + 1, 'z');
            EXPECT_NEAR(e.per_site_bond[i], (v.adjoint() * b * v)(0, 0).real(), 1e-12);
        }
        EXPECT_NEAR(e.per_site_total[i], e.per_site_bond[i] + e.per_site_field[i], 1e-12);
    }
}
