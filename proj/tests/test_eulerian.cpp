#include <gtest/gtest.h>

#include <cmath>

#include "pathsamp/eulerian.hpp"
#include "pathsamp/rng.hpp"
#include "support/qp_oracle.hpp"

using namespace pathsamp;
using pathsamp::testing::barrier_qp;
using pathsamp::testing::toy_problem;

namespace {

Vec random_vec(Eigen::Index n, RngStream& rng, double scale = 1.0) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

}  // namespace

TEST(GridOperators, GradientAndDivergenceAreAdjoint) {
    RngStream rng(1, 0);
    for (auto grid : {SpatialGrid::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), 0.1),
                      SpatialGrid::box(Vec::Constant(2, -1.0), Vec::Constant(2, 0.5), 0.25)}) {
        const Vec a = random_vec(grid.size(), rng);
        Mat B(grid.dim(), grid.size());
        for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = rng.normal();
        const Mat Da = grid_grad(grid, a);
        EXPECT_NEAR((Da.array() * B.array()).sum() + a.dot(grid_div(grid, B)), 0.0, 1e-12);
        EXPECT_NEAR(grid_div(grid, B).sum(), 0.0, 1e-12);
        const Mat DaT = Da.transpose();
        const Vec flat = Eigen::Map<const Vec>(DaT.data(), DaT.size());
        EXPECT_LT((Vec(grid_grad_matrix(grid) * a) - flat).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(GridOperators, GradientOfLinearFunctionIsConstantInside) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.1);
    Vec phi(grid.size());
    for (Eigen::Index i = 0; i < grid.size(); ++i) phi(i) = 3.0 * grid.point(i)(0);
    const Mat D = grid_grad(grid, phi);
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i) EXPECT_NEAR(D(0, i), 3.0, 1e-12);
    EXPECT_EQ(D(0, grid.size() - 1), 0.0);
}

TEST(ProjectK, InteriorAndAxisCases) {
    auto [a, b] = project_K(-1.0, Vec::Zero(1), 0.0);
    EXPECT_EQ(a, -1.0);
    EXPECT_EQ(b(0), 0.0);
    std::tie(a, b) = project_K(1.0, Vec::Zero(1), 0.0);
    EXPECT_NEAR(a, 0.0, 1e-14);
    EXPECT_EQ(b(0), 0.0);
}

TEST(ProjectK, RandomPointsLandOnBoundaryAndAreClosest) {
    RngStream rng(2, 0);
    for (int trial = 0; trial < 5; ++trial) {
        const double c = rng.normal();
        const double a0 = c + 1.0 + 3.0 * rng.uniform();
        const Vec b0 = random_vec(1, rng, 2.0);
        const auto [a, b] = project_K(a0, b0, c);
        EXPECT_NEAR(a + 0.5 * b.squaredNorm() - c, 0.0, 1e-10);
        const double dist = std::hypot(a - a0, (b - b0)(0));
        double best = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 1000000; ++k) {
            const double bb = -10.0 + 20.0 * (k + 0.5) / 1e6;
            best = std::min(best, std::hypot(c - 0.5 * bb * bb - a0, bb - b0(0)));
        }
        EXPECT_LE(dist, best + 1e-9);
    }
}

TEST(ProjectK, IdempotentAndNonexpansive) {
    RngStream rng(3, 0);
    for (int trial = 0; trial < 200; ++trial) {
        const double c = rng.normal();
        const double a1 = 3.0 * rng.normal(), a2 = 3.0 * rng.normal();
        const Vec b1 = random_vec(2, rng, 2.0), b2 = random_vec(2, rng, 2.0);
        const auto [pa1, pb1] = project_K(a1, b1, c);
        const auto [pa2, pb2] = project_K(a2, b2, c);
        const auto [qa1, qb1] = project_K(pa1, pb1, c);
        EXPECT_NEAR(qa1, pa1, 1e-10);
        EXPECT_LT((qb1 - pb1).norm(), 1e-10);
        const double before = std::sqrt((a1 - a2) * (a1 - a2) + (b1 - b2).squaredNorm());
        const double after = std::sqrt((pa1 - pa2) * (pa1 - pa2) + (pb1 - pb2).squaredNorm());
        EXPECT_LE(after, before + 1e-10);
    }
}

TEST(ProjectK, WeightedProjectionSatisfiesKkt) {
    const double wa = 0.3, wb = 5.0, c = 0.2;
    Vec b0(2);
    b0 << 1.5, -0.7;
    const double a0 = 2.0;
    const auto [a, b] = project_K(a0, b0, c, wa, wb);
    EXPECT_NEAR(a + 0.5 * b.squaredNorm() - c, 0.0, 1e-10);
    // Stationarity: (a - a0)/wa = -mu, (b - b0)/wb = -mu b for the same mu.
    const double mu = (a0 - a) / wa;
    EXPECT_GT(mu, 0.0);
    EXPECT_LT(((b - b0) / wb + mu * b).norm(), 1e-10);
}

TEST(PhiProx, TrivialCasesAndKkt) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.1);
    CpProblem p = toy_problem(grid, 4);
    RngStream rng(5, 0);
    const Vec phi0 = random_vec(grid.size(), rng);
    EXPECT_LT((PhiProx(p, 0.0)(phi0) - phi0).cwiseAbs().maxCoeff(), 1e-14);

    CpProblem empty = p;
    empty.q0.setZero();
    empty.W.setZero();
    EXPECT_LT((PhiProx(empty, 0.7)(phi0) - phi0).cwiseAbs().maxCoeff(), 1e-14);

    const double delta = 0.37;
    const Vec phi = PhiProx(p, delta)(phi0);
    const Vec kkt = phi - phi0 + delta * (grid_grad_adjoint(grid, p.W.cwiseProduct(grid_grad(grid, phi) + p.g)) + p.q0);
    EXPECT_LT(kkt.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(CpIterate, ZeroDataGivesConstantPotential) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.1);
    CpProblem p = toy_problem(grid, 6);
    p.q0.setConstant(1.0);
    p.W.setZero();
    for (Eigen::Index i = 0; i + 1 < grid.size(); ++i) p.W(0, i) = p.h;
    p.g.setZero();
    p.c.setZero();
    CpOptions opt;
    opt.tol = 1e-10;
    opt.density_tol = 0.0;
    const auto r = cp_iterate(p, opt);
    EXPECT_TRUE(r.converged);
    EXPECT_LT(r.state.phi.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(CpIterate, MatchesBarrierQpOnFiveNodes) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.25);
    ASSERT_EQ(grid.size(), 5);
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        const CpProblem p = toy_problem(grid, seed);
        const Vec ref = barrier_qp(p);
        CpOptions opt;
        opt.tol = 1e-11;
        opt.density_tol = 0.0;
        opt.max_iters = 500000;
        const auto r = cp_iterate(p, opt);
        EXPECT_LT((r.state.phi - ref).cwiseAbs().maxCoeff(), 1e-3) << "seed " << seed;
        EXPECT_LT(cp_infeasibility(p, r.state), 1e-6);
        EXPECT_NEAR(cp_objective(p, r.state.phi), cp_objective(p, ref), 1e-5);
    }
}

TEST(CpIterate, LongerRunsGetCloser) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.25);
    const CpProblem p = toy_problem(grid, 10);
    const Vec ref = barrier_qp(p);
    CpOptions opt;
    opt.tol = 0.0;
    opt.density_tol = 0.0;
    double best = std::numeric_limits<double>::infinity(), first = 0.0;
    for (std::size_t it = 64; it <= 16384; it *= 2) {
        opt.max_iters = it;
        const double err = (cp_iterate(p, opt).state.phi - ref).cwiseAbs().maxCoeff();
        if (it == 64) first = err;
        best = std::min(best, err);
    }
    EXPECT_LT(best, first);
}

TEST(AdvanceDensity, BrownianMarginalEvolution) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, -5.0), Vec::Constant(1, 5.0), 0.02);
    const auto sc = brownian_scenario(Vec::Zero(1));
    const double t0 = 0.5, h = 0.01;
    const auto tr = run_eulerian(grid, gaussian_grid_density(grid, Vec::Zero(1), 2 * t0), sc, t0, h, 10);
    for (std::size_t k = 0; k < tr.steps.size(); ++k) EXPECT_LT(tr.steps[k].mass_drift, 1e-6);
    const auto exact = gaussian_grid_density(grid, Vec::Zero(1), 2 * tr.times.back());
    EXPECT_LT(l1_distance(grid, tr.densities.back(), exact), 5e-2);
}

TEST(AdvanceDensity, TwoDimensionalStepConservesMass) {
    const auto grid = SpatialGrid::box(Vec::Constant(2, -3.0), Vec::Constant(2, 3.0), 0.2);
    Vec A(2);
    A << 0.3, -0.2;
    const auto sc = brownian_scenario(A);
    const double t0 = 0.5, h = 0.02;
    const auto r = advance_density(grid, gaussian_grid_density(grid, A, 2 * t0), sc, t0, h);
    EXPECT_LT(r.mass_drift, 1e-6);
    EXPECT_LT(l1_distance(grid, r.q, gaussian_grid_density(grid, A, 2 * (t0 + h))), 5e-2);
}

TEST(AdvanceDensity, StrongPinMovesMassTowardObservation) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, -5.0), Vec::Constant(1, 5.0), 0.05);
    auto sc = brownian_scenario(Vec::Zero(1));
    const double y = 1.0, gamma = 0.3, t0 = 0.5, h = 0.01;
    sc.J = [=](const Vec& x, double t) { return std::abs(t - (t0 + h)) < 1e-12 ? (x(0) - y) * (x(0) - y) / (2 * gamma * gamma) : 0.0; };
    const auto q0 = gaussian_grid_density(grid, Vec::Zero(1), 2 * t0);
    const auto r = advance_density(grid, q0, sc, t0, h);
    double mean = 0.0;
    for (Eigen::Index i = 0; i < grid.size(); ++i) mean += grid.point(i)(0) * r.q.q(i) * grid.cell_volume();
    EXPECT_GT(mean, 0.01);
}

TEST(AdvanceDensity, RejectsBadInput) {
    const auto grid = SpatialGrid::box(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0), 0.1);
    GridDensity q{Vec::Constant(grid.size(), 1.0)};
    q.q(3) = -0.1;
    EXPECT_THROW(advance_density(grid, q, brownian_scenario(Vec::Zero(1)), 0.5, 0.01), ConfigError);
    EXPECT_THROW(SpatialGrid::box(Vec::Zero(3), Vec::Ones(3), 0.1), ConfigError);
    EXPECT_THROW(SpatialGrid(Vec::Zero(1), {5}, 0.0), ConfigError);
}
