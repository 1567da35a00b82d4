#include <gtest/gtest.h>

#include <cmath>

#include "pathsamp/spde.hpp"

using namespace pathsamp;

namespace {

class LinearPotential final : public Potential {
public:
    explicit LinearPotential(Vec a) : a_(std::move(a)) {}
    double value(const Vec& x) const override { return a_.dot(x); }
    Vec grad(const Vec&) const override { return a_; }
    double laplacian(const Vec&) const override { return 0.0; }
    Mat hessian(const Vec& x) const override { return Mat::Zero(x.size(), x.size()); }
    Vec grad_laplacian(const Vec& x) const override { return Vec::Zero(x.size()); }

private:
    Vec a_;
};

Vec v1(double a) { return Vec::Constant(1, a); }

// Dense (I + c A) with A = tridiag(1, -2, 1)/dt², c already including 1/dt².
Mat dense_cn(Eigen::Index m, double c) {
    Mat M = Mat::Identity(m, m) * (1.0 - 2.0 * c);
    for (Eigen::Index i = 0; i + 1 < m; ++i) M(i, i + 1) = M(i + 1, i) = c;
    return M;
}

TpsTarget double_well_target(double dt) {
    return TpsTarget(std::make_shared<DoubleWellPotential>(5.0), v1(-1.0), v1(1.0), TimeGrid(1.0, dt));
}

}  // namespace

TEST(VariationalGrad, StraightLineWithoutDriftIsZero) {
    const TimeGrid g(1.0, 0.1);
    Path p = Path::constant(g, Vec::Zero(2));
    for (std::size_t j = 0; j < g.n_nodes(); ++j) p.values.col(static_cast<Eigen::Index>(j)) << 3.0 * g.time(j), -g.time(j);
    const Mat v = variational_grad(p, FlatPotential{});
    EXPECT_EQ(v.cols(), 9);
    EXPECT_LT(v.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(VariationalGrad, ParabolaGivesHalfSecondDerivative) {
    const TimeGrid g(6.0, 1.0);
    Path p = Path::constant(g, Vec::Zero(1));
    for (std::size_t j = 0; j < g.n_nodes(); ++j) p.values(0, static_cast<Eigen::Index>(j)) = g.time(j) * g.time(j);
    const Mat v = variational_grad(p, FlatPotential{});
    for (Eigen::Index j = 0; j < v.cols(); ++j) EXPECT_NEAR(v(0, j), 1.0, 1e-12);
}

TEST(VariationalGrad, ObservationMatchedAtItsNodeContributesNothing) {
    const TimeGrid g(1.0, 0.25);
    Path p = Path::constant(g, v1(0.0));
    for (std::size_t j = 0; j < g.n_nodes(); ++j) p.values(0, static_cast<Eigen::Index>(j)) = 2.0 * g.time(j);
    const ObservationSet hit(g, {{0.5, v1(1.0)}}, 0.3);
    const ObservationSet miss(g, {{0.5, v1(0.4)}}, 0.3);
    EXPECT_NEAR(variational_grad(p, FlatPotential{}, 1.0, &hit)(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(variational_grad(p, FlatPotential{}, 1.0, &miss)(0, 1), (0.4 - 1.0) / 0.09, 1e-12);
}

TEST(VariationalGrad, DriftTermsMatchPotentialDerivatives) {
    // u = -∇V for the double well, checked against hand-computed derivatives.
    const TimeGrid g(1.0, 0.5);
    Path p = Path::constant(g, v1(0.3));
    const Mat v = variational_grad(p, DoubleWellPotential(5.0));
    const double x = 0.3;
    const double Vp = 20.0 * x * (x * x - 1.0), Vpp = 60.0 * x * x - 20.0, Vppp = 120.0 * x;
    EXPECT_NEAR(v(0, 0), -0.5 * Vpp * Vp + 0.5 * Vppp, 1e-10);
}

TEST(CnPropose, ZeroNoiseSolvesDeterministicSystem) {
    const auto tgt = double_well_target(0.05);
    const Eigen::Index m = tgt.interior();
    const double ds = 0.02, dt = 0.05, c = 0.25 * ds / (dt * dt);
    const Mat x = tgt.sample_bridge(CounterRng(3, 0));
    const auto p = cn_propose(tgt, x, 0.0, ds, Mat::Zero(1, m));
    // Row-vector convention: x' L = x R + ½ ds bc.
    const Mat lhs = p.proposal * dense_cn(m, -c);
    const Mat rhs = x * dense_cn(m, c) + 0.5 * ds * tgt.boundary_term();
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(CnPropose, LeftAndRightOperatorsSumToTwiceIdentity) {
    const Eigen::Index m = 7;
    const double c = 3.7;
    const Mat I = Mat::Identity(m, m);
    EXPECT_LT((detail::apply_cn(I, -c) + detail::apply_cn(I, c) - 2.0 * I).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((detail::apply_cn(I, c) - dense_cn(m, c)).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((detail::solve_cn(dense_cn(m, -c), -c) - I).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CnPropose, ExactForBrownianBridgeTarget) {
    // With M = 0 the Crank-Nicolson proposal is reversible w.r.t. the discrete bridge.
    const TimeGrid g(1.0, 0.01);
    const TpsTarget tgt(std::make_shared<FlatPotential>(), Vec::Constant(2, -1.0), Vec::Constant(2, 2.0), g);
    const CounterRng rng(5, 0);
    Mat x = tgt.sample_bridge(rng);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
        const auto p = cn_propose(tgt, x, 0.7, 0.05, draw_zeta(rng, 10 + i, 2, tgt.interior()));
        const double la = tgt.log_density(p.proposal, 0.7) - tgt.log_density(x, 0.7) + p.log_q_rev - p.log_q_fwd;
        worst = std::max(worst, std::abs(la));
        x = p.proposal;
    }
    EXPECT_LT(worst, 1e-8);
}

TEST(MhAccept, IdenticalProposalIsAccepted) {
    Mat x = Mat::Constant(1, 3, 0.5);
    const Mat prop = x;
    const auto r = mh_accept(x, prop, 0.0, -1.25, -1.25, 0.999999);
    EXPECT_TRUE(r.accepted);
    EXPECT_DOUBLE_EQ(r.log_alpha, 0.0);
}

TEST(MhAccept, RejectionKeepsCurrentPath) {
    Mat x = Mat::Constant(1, 3, 0.5);
    const Mat prop = Mat::Constant(1, 3, 9.0);
    EXPECT_FALSE(mh_accept(x, prop, -5.0, 0.0, 0.0, 0.5).accepted);
    EXPECT_EQ(x(0, 0), 0.5);
    EXPECT_TRUE(mh_accept(x, prop, std::log(0.6), 0.0, 0.0, 0.5).accepted);
    EXPECT_EQ(x(0, 0), 9.0);
}

TEST(MhAccept, ThreeNodeChainMatchesDirectNormalization) {
    // One interior node: pi_s is a 1D density evaluated on a grid.
    const TimeGrid g(0.5, 0.25);
    const TpsTarget tgt(std::make_shared<DoubleWellPotential>(1.0), v1(-1.0), v1(1.0), g);
    const double s = 1.0;
    const int bins = 24;
    const double lo = -3.0, hi = 3.0, w = (hi - lo) / bins;
    std::vector<double> exact(bins, 0.0);
    double Z = 0.0;
    for (int b = 0; b < bins; ++b) {
        for (int q = 0; q < 50; ++q) {
            const double xv = lo + (b + (q + 0.5) / 50.0) * w;
            const double p = std::exp(tgt.log_density(Mat::Constant(1, 1, xv), s));
            exact[static_cast<std::size_t>(b)] += p;
            Z += p;
        }
    }
    for (double& e : exact) e /= Z;
    const CounterRng rng(8, 0);
    Mat x = Mat::Zero(1, 1);
    std::vector<double> hist(bins, 0.0);
    const std::uint64_t steps = 200000;
    for (std::uint64_t i = 0; i < steps; ++i) {
        spde_mh_step(tgt, x, s, 0.05, rng, i);
        const int b = static_cast<int>(std::floor((x(0, 0) - lo) / w));
        if (b >= 0 && b < bins) hist[static_cast<std::size_t>(b)] += 1.0 / static_cast<double>(steps);
    }
    double tv = 0.0;
    for (int b = 0; b < bins; ++b) tv += 0.5 * std::abs(hist[static_cast<std::size_t>(b)] - exact[static_cast<std::size_t>(b)]);
    EXPECT_LT(tv, 0.02);
}

TEST(Jarzynski, FlatPotentialGivesUnitWeights) {
    const TpsTarget tgt(std::make_shared<FlatPotential>(), v1(-1.0), v1(1.0), TimeGrid(1.0, 0.02));
    JarzynskiConfig cfg;
    cfg.ds = 0.1;
    cfg.n_walkers = 8;
    const auto r = jarzynski_run(tgt, cfg, 4);
    for (double a : r.log_weights) EXPECT_EQ(a, 0.0);
    EXPECT_EQ(r.z_ratio, 1.0);
    EXPECT_DOUBLE_EQ(r.ess, 8.0);
}

TEST(Jarzynski, ConstantWorkIsExactPerWalker) {
    // V = a.x: J~ = (1/4)|a|² T on every path.
    const Vec a = (Vec(2) << 1.5, -2.0).finished();
    const TpsTarget tgt(std::make_shared<LinearPotential>(a), Vec::Zero(2), Vec::Ones(2), TimeGrid(1.0, 0.02));
    const double c = 0.25 * a.squaredNorm();
    JarzynskiConfig cfg;
    cfg.ds = 0.05;
    cfg.n_walkers = 6;
    const auto r = jarzynski_run(tgt, cfg, 2);
    for (double lw : r.log_weights) EXPECT_NEAR(std::exp(lw), std::exp(-c), 1e-14);
    EXPECT_NEAR(r.z_ratio, std::exp(-c), 1e-14);
    EXPECT_NEAR(r.z_std_error, 0.0, 1e-14);
}

TEST(Jarzynski, DoubleWellWeightsAreFiniteAndSatisfyJensen) {
    const auto tgt = double_well_target(0.01);
    JarzynskiConfig cfg;
    cfg.ds = 0.05;
    cfg.n_walkers = 24;
    cfg.snapshots = {0.0, 0.5, 1.0};
    const auto r = jarzynski_run(tgt, cfg, 9);
    double mean_log = 0.0;
    for (double lw : r.log_weights) {
        EXPECT_TRUE(std::isfinite(lw));
        mean_log += lw / 24.0;
    }
    EXPECT_LE(mean_log, r.log_z + 1e-12);
    EXPECT_GE(r.ess, 1.0);
    EXPECT_LE(r.ess, 24.0);
    EXPECT_TRUE(std::isfinite(r.weighted_mean([](const Mat& x) { return x(0, x.cols() / 2); })));
    ASSERT_EQ(r.snapshots.size(), 3u);
    EXPECT_EQ(r.snapshots[2].second[0], r.finals[0]);
    for (double acc : r.acceptance) EXPECT_GT(acc, 0.0);
}

TEST(Jarzynski, DeterministicForSeed) {
    const auto tgt = double_well_target(0.05);
    JarzynskiConfig cfg;
    cfg.ds = 0.1;
    cfg.n_walkers = 4;
    set_num_threads(1);
    const auto a = jarzynski_run(tgt, cfg, 77);
    set_num_threads(3);
    const auto b = jarzynski_run(tgt, cfg, 77);
    set_num_threads(1);
    EXPECT_EQ(a.log_weights, b.log_weights);
}

TEST(TpsRefresh, KeepsEndpointsPinned) {
    auto tgt = std::make_shared<const TpsTarget>(double_well_target(0.05));
    Ensemble ens{{}, {}, tgt->grid()};
    for (std::size_t k = 0; k < 3; ++k) {
        ens.paths.push_back(tgt->full(tgt->sample_bridge(CounterRng(1, k))));
        ens.stream_ids.push_back(k);
    }
    const Mat before = ens.slice(10);
    tps_refresh(tgt, 20, 0.005)(ens, 0.5, 3);
    for (const auto& p : ens.paths) {
        EXPECT_EQ(p.values(0, 0), -1.0);
        EXPECT_EQ(p.values(0, p.values.cols() - 1), 1.0);
    }
    EXPECT_NE(ens.slice(10), before);
}
