#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pathsamp/diffnet.hpp"
#include "pathsamp/drift.hpp"
#include "pathsamp/functionals.hpp"
#include "pathsamp/parallel.hpp"
#include "pathsamp/sde.hpp"

namespace pathsamp {

/// Drift increment phi(x, t) represented by an MLP on the concatenated input (x, t).
class MlpField final : public Drift {
public:
    explicit MlpField(Mlp net) : net_(std::move(net)) {
        if (net_.in_dim() != net_.out_dim() + 1) throw ConfigError("MlpField expects input d+1 and output d");
    }

    Vec eval(const Vec& x, double t, std::size_t node) const override {
        Mat out;
        eval_batch(Mat(x), t, node, out);
        return out.col(0);
    }
    double divergence(const Vec& x, double t, std::size_t) const override {
        return net_.divergence(with_time(Mat(x), t), dim())(0);
    }
    void eval_batch(const Mat& X, double t, std::size_t, Mat& out) const override {
        out = net_.forward(with_time(X, t));
    }
    void divergence_batch(const Mat& X, double t, std::size_t, Vec& out) const override {
        out = net_.divergence(with_time(X, t), dim());
    }

    const Mlp& net() const { return net_; }
    int dim() const { return net_.out_dim(); }

    static Mat with_time(const Mat& X, double t) {
        Mat in(X.rows() + 1, X.cols());
        in.topRows(X.rows()) = X;
        in.row(X.rows()).setConstant(t);
        return in;
    }

private:
    Mlp net_;
};

/// Path functional J used by the annealing path pi_s ∝ exp(-I - sJ).
using PathFunctional = std::function<double(const Path&)>;

/// Sum over nodes 0..n-1 of -(dt/2)(b - xdot)^T phi - (dt/4) div phi.
inline double h_discrete(const Path& path, const Drift& drift, const Drift& phi) {
    const TimeGrid& g = path.grid;
    const double dt = g.dt();
    double h = 0.0;
    for (std::size_t j = 0; j < g.n_steps(); ++j) {
        const Vec x = path.at(j);
        const double t = g.time(j);
        const Vec r = drift.eval(x, t, j) - (path.at(j + 1) - x) / dt;
        h += -0.5 * dt * r.dot(phi.eval(x, t, j)) - 0.25 * dt * phi.divergence(x, t, j);
    }
    return h;
}

/// (1/K) sum_k (h_k - mean h + J_k - mean J)^2.
inline double consistency_loss(const std::vector<double>& h, const std::vector<double>& J) {
    if (h.size() < 2 || h.size() != J.size()) throw ConfigError("consistency_loss needs K >= 2 matched values");
    const double K = static_cast<double>(h.size());
    double hm = 0.0, jm = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        hm += h[k];
        jm += J[k];
    }
    hm /= K;
    jm /= K;
    double loss = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        const double r = h[k] - hm + J[k] - jm;
        loss += r * r;
    }
    return loss / K;
}

inline double consistency_loss(const Ensemble& ens, const Drift& drift, const Drift& phi, const PathFunctional& J) {
    std::vector<double> h(ens.size()), jv(ens.size());
    parallel_for(ens.size(), [&](std::size_t k) {
        h[k] = h_discrete(ens.paths[k], drift, phi);
        jv[k] = J(ens.paths[k]);
    });
    return consistency_loss(h, jv);
}

/// Ensemble flattened for batched network evaluation: column k*n + j holds
/// (X_j^k, t_j), with the residual b(X_j^k, t_j) - (X_{j+1}^k - X_j^k)/dt.
struct TrainingBatch {
    Mat inputs;
    Mat residual;
    std::size_t n_paths = 0;
    std::size_t n_steps = 0;
    double dt = 0.0;
};

inline TrainingBatch make_batch(const Ensemble& ens, const Drift& drift) {
    const auto d = static_cast<Eigen::Index>(ens.dim());
    const std::size_t K = ens.size(), n = ens.grid.n_steps();
    TrainingBatch tb;
    tb.n_paths = K;
    tb.n_steps = n;
    tb.dt = ens.grid.dt();
    tb.inputs.resize(d + 1, static_cast<Eigen::Index>(K * n));
    tb.residual.resize(d, static_cast<Eigen::Index>(K * n));
    Mat b;
    for (std::size_t j = 0; j < n; ++j) {
        const Mat X = ens.slice(j);
        drift.eval_batch(X, ens.grid.time(j), j, b);
        for (std::size_t k = 0; k < K; ++k) {
            const auto col = static_cast<Eigen::Index>(k * n + j);
            const auto kk = static_cast<Eigen::Index>(k);
            tb.inputs.col(col).head(d) = X.col(kk);
            tb.inputs(d, col) = ens.grid.time(j);
            tb.residual.col(col) = b.col(kk) - (ens.paths[k].at(j + 1) - X.col(kk)) / tb.dt;
        }
    }
    return tb;
}

/// Per-path h values for a network on a prepared batch.
inline std::vector<double> batch_h(const Mlp& net, const TrainingBatch& tb) {
    Mat out;
    Vec div;
    net.value_and_grad(tb.inputs, Mat(), Vec(), net.out_dim(), &out, &div, nullptr);
    std::vector<double> h(tb.n_paths, 0.0);
    const Vec per_col = -0.5 * tb.dt * tb.residual.cwiseProduct(out).colwise().sum().transpose() - 0.25 * tb.dt * div;
    for (std::size_t k = 0; k < tb.n_paths; ++k)
        h[k] = per_col.segment(static_cast<Eigen::Index>(k * tb.n_steps), static_cast<Eigen::Index>(tb.n_steps)).sum();
    return h;
}

struct TrainReport {
    double loss_initial = 0.0;
    double loss_final = 0.0;
};

/// Adam on the consistency loss over the whole ensemble.
inline TrainReport train_increment(Mlp& net, const TrainingBatch& tb, const std::vector<double>& J, std::size_t iters,
                                   double lr) {
    const std::size_t K = tb.n_paths;
    if (K < 2) throw ConfigError("training needs K >= 2");
    Adam opt(lr);
    TrainReport rep;
    Mat U(tb.residual.rows(), tb.residual.cols());
    Vec c(tb.residual.cols());
    double jm = 0.0;
    for (double v : J) jm += v;
    jm /= static_cast<double>(K);
    for (std::size_t it = 0; it <= iters; ++it) {
        const std::vector<double> h = batch_h(net, tb);
        double hm = 0.0;
        for (double v : h) hm += v;
        hm /= static_cast<double>(K);
        std::vector<double> r(K);
        double loss = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            r[k] = h[k] - hm + J[k] - jm;
            loss += r[k] * r[k];
        }
        loss /= static_cast<double>(K);
        if (!std::isfinite(loss)) throw NumericalError("consistency loss is not finite at iteration " + std::to_string(it));
        if (it == 0) rep.loss_initial = loss;
        rep.loss_final = loss;
        if (it == iters) break;
        // dL/dh_k = 2 r_k / K; the centering terms cancel because sum r = 0.
        for (std::size_t k = 0; k < K; ++k) {
            const double w = 2.0 * r[k] / static_cast<double>(K);
            const auto lo = static_cast<Eigen::Index>(k * tb.n_steps), len = static_cast<Eigen::Index>(tb.n_steps);
            U.middleCols(lo, len) = (-0.5 * tb.dt * w) * tb.residual.middleCols(lo, len);
            c.segment(lo, len).setConstant(-0.25 * tb.dt * w);
        }
        Vec grad;
        net.value_and_grad(tb.inputs, U, c, net.out_dim(), nullptr, nullptr, &grad);
        opt.step(net.params(), grad);
    }
    return rep;
}

enum class AnnealPath { Likelihood, TpsPotential };

struct TransportConfig {
    double ds = 0.1;
    std::size_t n_paths = 500;
    std::size_t train_iters = 200;
    double learning_rate = 1e-3;
    std::vector<int> hidden{20, 30};
    Activation activation = Activation::ReLU;
    double init_out_scale = 1.0;
    std::size_t refresh_sweeps = 0;

    std::size_t n_steps() const {
        const double r = 1.0 / ds;
        const auto n = static_cast<std::size_t>(std::llround(r));
        if (!(ds > 0.0 && ds <= 1.0) || std::abs(r - static_cast<double>(n)) > 1e-9 * r)
            throw ConfigError("anneal step ds must divide 1");
        return n;
    }
};

/// Prior path law (base drift + initial law) and the functional J being annealed in.
struct TransportProblem {
    DriftPtr base;
    InitialSampler initial;
    TimeGrid grid;
    PathFunctional J;
};

struct AnnealRecord {
    double s;
    double mean_J;
    double loss_initial;
    double loss_final;
    double A;
};

struct TransportState {
    double s = 0.0;
    std::shared_ptr<const StackedDrift> drift;
    double A = 0.0;
    std::vector<AnnealRecord> history;
};

/// Learns one drift increment from an ensemble simulated under `drift`.
/// Returns the increment field and the training report.
struct IncrementLearner {
    std::function<std::pair<DriftPtr, TrainReport>(const Ensemble&, const Drift&, const std::vector<double>&,
                                                   std::uint64_t)>
        learn;
};

/// Optional in-place refresh of the ensemble towards pi_s before learning.
using EnsembleRefresh = std::function<void(Ensemble&, double s, std::uint64_t seed)>;

inline IncrementLearner mlp_learner(const TransportConfig& cfg) {
    return {[cfg](const Ensemble& ens, const Drift& drift, const std::vector<double>& J, std::uint64_t seed) {
        const int d = static_cast<int>(ens.dim());
        std::vector<int> widths{d + 1};
        widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
        widths.push_back(d);
        Mlp net(widths, cfg.activation);
        RngStream rng(seed, 0x6e6574ull);
        net.init(rng, cfg.init_out_scale);
        const TrainingBatch tb = make_batch(ens, drift);
        const TrainReport rep = train_increment(net, tb, J, cfg.train_iters, cfg.learning_rate);
        return std::pair<DriftPtr, TrainReport>{std::make_shared<MlpField>(std::move(net)), rep};
    }};
}

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
    return detail::splitmix64(seed ^ (0xA5A5A5A5ull + static_cast<std::uint64_t>(step) * 0x9E3779B97F4A7C15ull));
}

inline TransportState initial_transport_state(const TransportProblem& prob) {
    return {0.0, std::make_shared<StackedDrift>(prob.base), 0.0, {}};
}

/// One s-step: simulate, (optionally) refresh, learn phi, push it, update A.
inline TransportState anneal_step(const TransportState& state, const TransportConfig& cfg, const TransportProblem& prob,
                                  const IncrementLearner& learner, std::uint64_t seed,
                                  const EnsembleRefresh& refresh = nullptr) {
    if (state.s + cfg.ds > 1.0 + 1e-9) throw ConfigError("anneal_step past s = 1");
    const std::size_t step = state.history.size();
    const std::uint64_t sseed = step_seed(seed, step);
    Ensemble ens = simulate_sde(*state.drift, prob.initial, prob.grid, cfg.n_paths, sseed);
    if (refresh && cfg.refresh_sweeps > 0) refresh(ens, state.s, sseed);
    std::vector<double> J(ens.size());
    parallel_for(ens.size(), [&](std::size_t k) { J[k] = prob.J(ens.paths[k]); });
    double mean_J = 0.0;
    for (double v : J) mean_J += v;
    mean_J /= static_cast<double>(J.size());

    auto [phi, rep] = learner.learn(ens, *state.drift, J, sseed);

    TransportState next;
    next.s = state.s + cfg.ds;
    next.drift = std::make_shared<StackedDrift>(state.drift->with(std::move(phi), cfg.ds));
    next.A = state.A - cfg.ds * mean_J;
    next.history = state.history;
    next.history.push_back({state.s, mean_J, rep.loss_initial, rep.loss_final, next.A});
    return next;
}

struct TransportResult {
    TransportState state;
    double log_z() const { return state.A; }
};

inline TransportResult run_transport(const TransportConfig& cfg, const TransportProblem& prob,
                                     const IncrementLearner& learner, std::uint64_t seed,
                                     const EnsembleRefresh& refresh = nullptr) {
    TransportState st = initial_transport_state(prob);
    const std::size_t n = cfg.n_steps();
    for (std::size_t i = 0; i < n; ++i) st = anneal_step(st, cfg, prob, learner, seed, refresh);
    return {std::move(st)};
}

}  // namespace pathsamp
