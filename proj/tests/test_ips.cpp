#include <gtest/gtest.h>

#include <cmath>

#include "pathsamp/ips.hpp"
#include "pathsamp/oracles.hpp"

using namespace pathsamp;

namespace {

IpsConfig ou_config(double beta = 0.25) {
    IpsConfig cfg;
    cfg.potential = std::make_shared<QuadraticPotential>(beta);
    return cfg;
}

Mat gaussian_cloud(Eigen::Index d, Eigen::Index n, double sd, std::uint64_t seed) {
    RngStream rng(seed, 0);
    Mat X(d, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < d; ++c) X(c, i) = sd * rng.normal();
    return X;
}

}  // namespace

TEST(IntegrateStep, ZeroForceMovesInStraightLines) {
    PhaseCloud p{gaussian_cloud(2, 5, 1.0, 1), gaussian_cloud(2, 5, 1.0, 2), 0.0};
    const Mat V0 = p.V, X0 = p.X;
    const Mat zero = Mat::Zero(2, 5);
    for (int k = 0; k < 10; ++k) p = integrate_step(p, 0.1, zero);
    EXPECT_EQ((p.V - V0).norm(), 0.0);
    EXPECT_LT((p.X - (X0 + V0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(IntegrateStep, ConstantForceIsExact) {
    PhaseCloud p{gaussian_cloud(1, 3, 1.0, 3), gaussian_cloud(1, 3, 1.0, 4), 0.0};
    const Mat X0 = p.X, V0 = p.V;
    const Mat g = Mat::Constant(1, 3, -9.81);
    const double h = 0.05;
    const int k = 37;
    for (int i = 0; i < k; ++i) p = integrate_step(p, h, g);
    const double t = k * h;
    EXPECT_LT((p.X - (X0 + t * V0 + 0.5 * t * t * g)).cwiseAbs().maxCoeff(), 1e-11);
    EXPECT_LT((p.V - (V0 + t * g)).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(IntegrateStep, HarmonicEnergyDriftIsSmall) {
    const double omega = 2.0, h = 1e-3;
    PhaseCloud p{Mat::Constant(1, 1, 1.0), Mat::Zero(1, 1), 0.0};
    auto energy = [&](const PhaseCloud& q) { return 0.5 * q.V.squaredNorm() + 0.5 * omega * omega * q.X.squaredNorm(); };
    const double e0 = energy(p);
    const std::function<Mat(const PhaseCloud&)> force = [&](const PhaseCloud& q) { return Mat(-omega * omega * q.X); };
    for (int k = 0; k < 1000; ++k) p = integrate_step(p, h, force);
    EXPECT_LT(std::abs(energy(p) - e0) / e0, 0.01);
    EXPECT_NEAR(p.X(0, 0), std::cos(omega), 5e-3);
}

TEST(ForceField, NearlyCancelsAtReference) {
    const double beta = 0.25;
    const auto cfg = ou_config(beta);
    const Mat X = gaussian_cloud(1, 500, 1.0 / std::sqrt(beta), 5);
    const Mat a = force_field(X, cfg, 6);
    EXPECT_LT(a.colwise().norm().mean(), 0.1);
}

TEST(ForceField, PointwiseReferenceTermMatchesAnalyticGradient) {
    auto cfg = ou_config(0.5);
    cfg.nu_term = NuTerm::Pointwise;
    const Mat X = gaussian_cloud(1, 50, 1.0, 7);
    auto kernel_only = cfg;
    kernel_only.potential = std::make_shared<FlatPotential>();
    const Mat diff = force_field(X, cfg, 8) - force_field(X, kernel_only, 8);
    // -∇(ΔV - ½|∇V|²) = β² x for V = βx²/2
    EXPECT_LT((diff - 0.25 * X).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ForceField, SymmetricCloudHasNoForceAtCenter) {
    auto cfg = ou_config();
    cfg.fi.m = 5000;
    Mat X(1, 3);
    X << -1.5, 0.0, 1.5;
    const Mat a = force_field(X, cfg, 9);
    EXPECT_NEAR(a(0, 1), 0.0, 0.05);
    EXPECT_NEAR(a(0, 0), -a(0, 2), 0.1);
}

TEST(ForceField, TranslationEquivariant) {
    const Mat X = gaussian_cloud(2, 20, 1.0, 10);
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
        const Vec c = gaussian_cloud(2, 1, 3.0, 20 + trial).col(0);
        IpsConfig a = ou_config(), b = ou_config();
        b.potential = std::make_shared<QuadraticPotential>(0.25, c);
        const Mat fa = force_field(X, a, 11);
        const Mat fb = force_field(X.colwise() + c, b, 11);
        EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(RunIps, ReferenceCloudStaysStationary) {
    auto cfg = ou_config();
    cfg.h = 0.05;
    cfg.fi.m = 10;
    const Mat X0 = gaussian_cloud(1, 300, 2.0, 12);
    const TimeGrid g = cfg.grid();
    const auto r = run_ips(cfg, X0, ObservationSet(g, {}, 1.0), 13);
    for (const Mat& X : r.track.clouds) {
        EXPECT_NEAR(X.mean(), X0.mean(), 0.05);
        EXPECT_NEAR((X.array() - X.mean()).square().mean() / (X0.array() - X0.mean()).square().mean(), 1.0, 0.05);
    }
}

TEST(RunIps, ImpulseImpartsTwiceTheLikelihoodGradient) {
    // A single particle: the Fisher force only depends on the perturbation draws, so
    // runs with and without the observation differ exactly by the impulse.
    for (double h : {0.1, 0.05}) {
        IpsConfig cfg;
        cfg.potential = std::make_shared<FlatPotential>();
        cfg.h = h;
        cfg.fi.m = 4;
        const Mat X0 = Mat::Constant(1, 1, 0.3);
        const TimeGrid g = cfg.grid();
        const ObservationSet obs(g, {{0.5, Vec::Constant(1, 1.0), 0.5}}, 1.0);
        const auto with = run_ips(cfg, X0, obs, 14);
        const auto without = run_ips(cfg, X0, ObservationSet(g, {}, 1.0), 14);
        const std::size_t node = g.snap(0.5);
        const double x_at = with.track.clouds[node](0, 0);
        EXPECT_NEAR(with.final.V(0, 0) - without.final.V(0, 0), 2.0 * (x_at - 1.0) / 0.25, 1e-6);
    }
}

TEST(RunIps, HalvingStepChangesMeansLessThanMonteCarloError) {
    auto cfg = ou_config();
    cfg.fi.m = 10;
    const Mat X0 = gaussian_cloud(1, 200, 2.0, 15);
    auto run = [&](double h) {
        cfg.h = h;
        const TimeGrid g = cfg.grid();
        const ObservationSet obs(g, {{0.5, Vec::Constant(1, -1.0), 1.0}}, 1.0);
        return run_ips(cfg, X0, obs, 16);
    };
    const auto a = run(0.05), b = run(0.025);
    const Mat& Xa = a.track.clouds.back();
    const double sd = std::sqrt((Xa.array() - Xa.mean()).square().mean() / static_cast<double>(Xa.cols()));
    EXPECT_LT(std::abs(Xa.mean() - b.track.clouds.back().mean()), sd);
}

TEST(RunIps, BlowUpGuardReportsStep) {
    auto cfg = ou_config();
    cfg.fi.m = 2;
    cfg.h = 0.1;
    cfg.position_bound = 2.0;
    const Mat X0 = Mat::Constant(1, 4, 1.9);
    const TimeGrid g = cfg.grid();
    const ObservationSet obs(g, {{0.0, Vec::Constant(1, -5.0), 0.1}}, 1.0);
    EXPECT_THROW(run_ips(cfg, X0, obs, 17), NumericalError);
}

TEST(RunIps, TerminalKlMoveContractsTowardReference) {
    auto cfg = ou_config();
    cfg.fi.m = 5;
    const Mat X = gaussian_cloud(1, 200, 5.0, 18);
    const Mat moved = terminal_kl_move(X, cfg, 0.5, 19);
    auto var = [](const Mat& M) { return (M.array() - M.mean()).square().mean(); };
    EXPECT_LT(var(moved), var(X));
}

TEST(IpsConfig, RejectsBadValues) {
    auto cfg = ou_config();
    cfg.h = 0.3;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = ou_config();
    cfg.potential = nullptr;
    EXPECT_THROW(cfg.validate(), ConfigError);
}
