#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pathsamp/diffnet.hpp"
#include "pathsamp/errors.hpp"
#include "pathsamp/fisher.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/potential.hpp"

namespace pathsamp {

/// Particle JKO scheme with an input-convex push-forward map per step.
/// The reference nu is proportional to exp(-V).
struct JkoConfig {
    double h = 0.2;
    double horizon = 1.0;
    FiConfig fi{};
    PotentialPtr potential;
    std::vector<int> hidden{32, 32, 32, 32, 32};
    std::size_t train_iters = 1500;
    double learning_rate = 1e-2;
    double init_scale = 0.1;
    bool terminal_term = true;

    std::size_t n_steps() const {
        if (!(h > 0.0) || !(horizon > 0.0)) throw ConfigError("jko: h and horizon must be positive");
        const double k = horizon / h;
        const double r = std::round(k);
        if (r < 1.0 || std::abs(k - r) > 1e-9 * std::max(1.0, k)) throw ConfigError("jko: horizon/h must be an integer");
        return static_cast<std::size_t>(r);
    }
    TimeGrid grid() const { return TimeGrid(horizon, horizon / static_cast<double>(n_steps())); }
    void validate() const {
        n_steps();
        fi.validate();
        if (!potential) throw ConfigError("jko: reference potential missing");
        if (hidden.empty()) throw ConfigError("jko: convex map needs hidden layers");
    }
};

struct JkoLoss {
    double w2 = 0.0, fisher = 0.0, likelihood = 0.0, reference = 0.0, terminal = 0.0;
    double total() const { return w2 + fisher + likelihood + reference + terminal; }
    Mat grad;  // d x n, w.r.t. the mapped particles
};

/// Loss of the step X -> Xn (Xn = mapped particles) and its gradient in Xn.
/// `node_next` selects J_{t+h}; `last` adds the terminal entropy term.
inline JkoLoss jko_loss(const Mat& X, const Mat& Xn, const Mat& xi, const JkoConfig& cfg, const ObservationSet& obs,
                        std::size_t node_next, bool last) {
    const Eigen::Index d = X.rows(), n = X.cols();
    if (n < 1) throw ConfigError("jko_loss: empty cloud");
    const double h = cfg.h, inv_n = 1.0 / static_cast<double>(n);
    const Potential& V = *cfg.potential;
    JkoLoss L;
    const Mat D = Xn - X;
    L.w2 = D.squaredNorm() * inv_n / (2.0 * h * h);
    L.grad = D * (inv_n / (h * h));

    const auto fv = fi_value_and_grad(Xn, xi, cfg.fi.sigma, cfg.fi.form, true);
    L.fisher = fv.value;
    L.grad += fv.grad;

    const bool add_terminal = last && cfg.terminal_term;
    std::vector<double> lik(static_cast<std::size_t>(n)), ref(static_cast<std::size_t>(n)), term(static_cast<std::size_t>(n));
    Mat g(d, n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        const Vec x = Xn.col(i);
        const Vec gv = V.grad(x);
        lik[ii] = obs.node_term(node_next, x);
        // Δlog nu + ½|∇V|² with log nu = -V
        ref[ii] = -V.laplacian(x) + 0.5 * gv.squaredNorm();
        Vec gi = (2.0 / h) * obs.node_grad(node_next, x) - V.grad_laplacian(x) + V.hessian(x) * gv;
        if (add_terminal) {
            term[ii] = V.value(x) - std::log(static_cast<double>(n));
            gi += gv / h;
        }
        g.col(i) = gi * inv_n;
    });
    for (Eigen::Index i = 0; i < n; ++i) {
        L.likelihood += lik[static_cast<std::size_t>(i)];
        L.reference += ref[static_cast<std::size_t>(i)];
        if (add_terminal) L.terminal += term[static_cast<std::size_t>(i)];
    }
    L.likelihood *= 2.0 / h * inv_n;
    L.reference *= inv_n;
    L.terminal *= inv_n / h;
    L.grad += g;
    if (!std::isfinite(L.total())) throw NumericalError("jko_loss: non-finite loss");
    return L;
}

struct JkoStep {
    Mat cloud;
    Icnn map;
    std::vector<double> loss_trace;
};

inline std::uint64_t jko_step_seed(std::uint64_t seed, std::size_t step) {
    return seed ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(step) + 1));
}

/// Trains a fresh near-identity convex map on the step loss and pushes X forward.
inline JkoStep jko_step(const Mat& X, std::size_t node_next, const JkoConfig& cfg, const ObservationSet& obs,
                        std::uint64_t seed, bool last = false) {
    cfg.validate();
    JkoStep out{Mat(), Icnn(static_cast<int>(X.rows()), cfg.hidden), {}};
    RngStream rng(seed, 1);
    out.map.init(rng, cfg.init_scale);
    const Mat xi = fi_perturbations(X.rows(), X.cols(), cfg.fi.m, seed);
    Adam opt(cfg.learning_rate);
    out.loss_trace.reserve(cfg.train_iters + 1);
    for (std::size_t it = 0; it < cfg.train_iters; ++it) {
        const Mat Xn = out.map.grad_x(X);
        const JkoLoss L = jko_loss(X, Xn, xi, cfg, obs, node_next, last);
        out.loss_trace.push_back(L.total());
        opt.step(out.map.params(), out.map.grad_params_of_map(X, L.grad));
    }
    out.cloud = out.map.grad_x(X);
    out.loss_trace.push_back(jko_loss(X, out.cloud, xi, cfg, obs, node_next, last).total());
    return out;
}

struct MarginalTrack {
    std::vector<double> times;
    std::vector<Mat> clouds;
    std::vector<Icnn> maps;  // one per step (empty for particle methods without maps)
    std::vector<std::vector<double>> loss_traces;

    Vec mean(Eigen::Index component = 0) const {
        Vec m(static_cast<Eigen::Index>(clouds.size()));
        for (std::size_t k = 0; k < clouds.size(); ++k) m(static_cast<Eigen::Index>(k)) = clouds[k].row(component).mean();
        return m;
    }
    Vec var(Eigen::Index component = 0) const {
        Vec v(static_cast<Eigen::Index>(clouds.size()));
        for (std::size_t k = 0; k < clouds.size(); ++k) {
            const auto r = clouds[k].row(component).array();
            const double mu = r.mean();
            v(static_cast<Eigen::Index>(k)) = (r - mu).square().sum() / std::max<double>(1.0, static_cast<double>(r.size() - 1));
        }
        return v;
    }
};

/// Sequential JKO steps from the initial cloud X0 (d x n) over [0, horizon].
inline MarginalTrack run_jko(const JkoConfig& cfg, const Mat& X0, const ObservationSet& obs, std::uint64_t seed) {
    cfg.validate();
    const std::size_t steps = cfg.n_steps();
    const TimeGrid grid = cfg.grid();
    MarginalTrack track;
    track.times.push_back(0.0);
    track.clouds.push_back(X0);
    for (std::size_t k = 0; k < steps; ++k) {
        auto st = jko_step(track.clouds.back(), k + 1, cfg, obs, jko_step_seed(seed, k), k + 1 == steps);
        track.times.push_back(grid.time(k + 1));
        track.clouds.push_back(std::move(st.cloud));
        track.maps.push_back(std::move(st.map));
        track.loss_traces.push_back(std::move(st.loss_trace));
    }
    return track;
}

}  // namespace pathsamp
