#include <gtest/gtest.h>

#include <cmath>

#include "pathsamp/oracles.hpp"

using namespace pathsamp;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }

// Dense joint-Gaussian conditioning of (X_0..X_n, Y_1..Y_m) for a scalar
// linear-Gaussian chain; independent of the Kalman recursion.
GaussianPathPosterior dense_posterior(const LinearGaussianPrior& prior, const ObservationSet& obs,
                                      const TimeGrid& grid) {
    const auto n = static_cast<Eigen::Index>(grid.n_nodes());
    const double a = prior.beta == 0.0 ? 1.0 : std::exp(-prior.beta * grid.dt());
    const double q = prior.beta == 0.0 ? 2.0 * grid.dt() : (1.0 - a * a) / prior.beta;
    Vec mean(n);
    Mat cov(n, n);
    mean(0) = prior.mean0;
    Vec var(n);
    var(0) = prior.var0;
    for (Eigen::Index j = 1; j < n; ++j) {
        mean(j) = a * mean(j - 1);
        var(j) = a * a * var(j - 1) + q;
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) cov(i, j) = cov(j, i) = std::pow(a, static_cast<double>(j - i)) * var(i);
    const auto m = static_cast<Eigen::Index>(obs.size());
    Mat H = Mat::Zero(m, n);
    Mat R = Mat::Zero(m, m);
    Vec y(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto& o = obs.entries()[static_cast<std::size_t>(k)];
        H(k, static_cast<Eigen::Index>(o.node)) = 1.0;
        R(k, k) = o.sigma * o.sigma;
        y(k) = o.value(0);
    }
    const Mat S = H * cov * H.transpose() + R;
    const Mat K = cov * H.transpose() * S.inverse();
    const Vec pm = mean + K * (y - H * mean);
    const Mat pc = cov - K * H * cov;
    return {pm, pc.diagonal()};
}

}  // namespace

TEST(BridgeMoments, HardPin) {
    const auto m = bridge_moments(-2.0, 2.0, 1.0, 0.5);
    EXPECT_DOUBLE_EQ(m.mean, 0.0);
    EXPECT_DOUBLE_EQ(m.var, 0.5);
    const auto m0 = bridge_moments(-2.0, 2.0, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(m0.mean, -2.0);
    EXPECT_DOUBLE_EQ(m0.var, 0.0);
}

TEST(BridgeMoments, SoftPinLimits) {
    const auto wide = soft_bridge_moments(-2.0, 2.0, 1e8, 1.0, 0.3);
    EXPECT_NEAR(wide.mean, -2.0, 1e-12);
    EXPECT_NEAR(wide.var, 0.6, 1e-12);
    const auto sharp = soft_bridge_moments(-2.0, 2.0, 1e-8, 1.0, 0.3);
    const auto hard = bridge_moments(-2.0, 2.0, 1.0, 0.3);
    EXPECT_NEAR(sharp.mean, hard.mean, 1e-12);
    EXPECT_NEAR(sharp.var, hard.var, 1e-12);
}

TEST(LgSmoother, StationaryOUWithoutObservations) {
    const TimeGrid g(1.0, 0.1);
    const ObservationSet none(g, {}, 1.0);
    const auto post = lg_smoother({0.25, 0.0, 4.0}, none, g);
    for (Eigen::Index j = 0; j < post.mean.size(); ++j) {
        EXPECT_NEAR(post.mean(j), 0.0, 1e-14);
        EXPECT_NEAR(post.var(j), 4.0, 1e-12);
    }
}

TEST(LgSmoother, ExactTerminalObservationMatchesBridge) {
    const TimeGrid g(1.0, 0.01);
    const ObservationSet obs(g, {{1.0, v1(2.0)}}, 1e-7);
    const auto post = lg_smoother({0.0, -2.0, 0.0}, obs, g);
    for (std::size_t j : {25u, 50u, 75u}) {
        const auto m = bridge_moments(-2.0, 2.0, 1.0, g.time(j));
        EXPECT_NEAR(post.mean(static_cast<Eigen::Index>(j)), m.mean, 1e-9);
        EXPECT_NEAR(post.var(static_cast<Eigen::Index>(j)), m.var, 1e-9);
    }
}

TEST(LgSmoother, SoftPinMatchesClosedForm) {
    const TimeGrid g(1.0, 0.01);
    const ObservationSet obs(g, {{1.0, v1(2.0)}}, 0.1);
    const auto post = lg_smoother({0.0, -2.0, 0.0}, obs, g);
    const auto m = soft_bridge_moments(-2.0, 2.0, 0.1, 1.0, 0.5);
    EXPECT_NEAR(post.mean(50), m.mean, 1e-12);
    EXPECT_NEAR(post.var(50), m.var, 1e-12);
}

TEST(LgSmoother, MatchesDenseConditioningOnSmallChains) {
    const TimeGrid g(1.0, 0.5);
    const ObservationSet obs(g, {{0.5, v1(-1.0), 1.0}, {1.0, v1(1.0), 0.1}}, 1.0);
    for (const LinearGaussianPrior prior : {LinearGaussianPrior{0.25, 0.0, 4.0}, LinearGaussianPrior{0.0, 0.3, 0.0}}) {
        const auto kal = lg_smoother(prior, obs, g);
        const auto dense = dense_posterior(prior, obs, g);
        EXPECT_TRUE(kal.mean.isApprox(dense.mean, 1e-10));
        EXPECT_LT((kal.var - dense.var).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(LgSmoother, VarianceShrinksWithSigma) {
    const TimeGrid g(1.0, 0.1);
    Vec prev = Vec::Constant(11, 1e9);
    for (double s : {2.0, 1.0, 0.5, 0.1}) {
        const ObservationSet obs(g, {{0.5, v1(-1.0)}, {1.0, v1(1.0)}}, s);
        const auto post = lg_smoother({0.25, 0.0, 4.0}, obs, g);
        EXPECT_TRUE((post.var.array() <= prev.array() + 1e-14).all());
        prev = post.var;
    }
}

TEST(LgSmoother, FixedInitialKeepsPriorAtTimeZero) {
    const TimeGrid g(1.0, 0.1);
    const ObservationSet obs(g, {{0.5, v1(-1.0), 1.0}, {1.0, v1(1.0), 0.1}}, 1.0);
    const LinearGaussianPrior prior{0.25, 0.0, 4.0};
    const auto fixed = lg_smoother_fixed_initial(prior, obs, g);
    EXPECT_NEAR(fixed.mean(0), 0.0, 1e-14);
    EXPECT_NEAR(fixed.var(0), 4.0, 1e-12);
    // The last node is conditioned on the sharp observation either way.
    const auto full = lg_smoother(prior, obs, g);
    EXPECT_NEAR(fixed.mean(10), 1.0, 0.05);
    EXPECT_LT(full.var(0), 4.0);
    // With a deterministic start both notions coincide.
    const LinearGaussianPrior pinned{0.25, 0.7, 0.0};
    const auto a = lg_smoother_fixed_initial(pinned, obs, g);
    const auto b = lg_smoother(pinned, obs, g);
    EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.var - b.var).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LgSmoother, FixedInitialMatchesMixtureOverStartingPoints) {
    // Average the pinned-start posterior over a quadrature of X_0 ~ N(m0, v0).
    const TimeGrid g(1.0, 0.1);
    const ObservationSet obs(g, {{0.6, v1(-1.0), 0.8}}, 1.0);
    const LinearGaussianPrior prior{0.25, 0.5, 4.0};
    const auto fixed = lg_smoother_fixed_initial(prior, obs, g);
    // Gauss-Hermite (probabilists') 3-point rule is exact for the affine/quadratic moments involved.
    const double nodes[3] = {-std::sqrt(3.0), 0.0, std::sqrt(3.0)};
    const double weights[3] = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
    Vec m1 = Vec::Zero(11), m2 = Vec::Zero(11);
    for (int i = 0; i < 3; ++i) {
        const LinearGaussianPrior start{0.25, 0.5 + 2.0 * nodes[i], 0.0};
        const auto p = lg_smoother(start, obs, g);
        m1 += weights[i] * p.mean;
        m2 += weights[i] * (p.var + p.mean.cwiseAbs2());
    }
    EXPECT_LT((fixed.mean - m1).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((fixed.var - (m2 - m1.cwiseAbs2())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DoobDrift, SoftPinMatchesClosedForm) {
    const TimeGrid g(1.0, 0.05);
    const ObservationSet obs(g, {{1.0, v1(2.0)}}, 0.5);
    const auto est = doob_drift_mc(ZeroDrift{}, obs, g, v1(0.3), 4, 20000, 17);
    const double exact = soft_pin_doob_drift(0.3, 0.2, 2.0, 0.5, 1.0);
    EXPECT_NEAR(est.drift(0), exact, 3.0 * est.std_error(0));
    EXPECT_GT(est.std_error(0), 0.0);
}

TEST(DoobDrift, SharpPinApproachesBridgeDrift) {
    const TimeGrid g(1.0, 0.05);
    const ObservationSet obs(g, {{1.0, v1(1.0)}}, 0.05);
    const auto est = doob_drift_mc(ZeroDrift{}, obs, g, v1(0.0), 10, 100000, 3);
    const double bridge = (1.0 - 0.0) / 0.5;
    EXPECT_NEAR(est.drift(0), bridge, 3.0 * est.std_error(0) + std::abs(bridge - soft_pin_doob_drift(0, 0.5, 1, 0.05, 1)));
}

TEST(DoobDrift, NoObservationsGiveZero) {
    const TimeGrid g(1.0, 0.1);
    const ObservationSet none(g, {}, 1.0);
    const auto est = doob_drift_mc(OUDrift(1.0), none, g, v1(0.5), 0, 1000, 1);
    EXPECT_DOUBLE_EQ(est.drift(0), 0.0);
}
