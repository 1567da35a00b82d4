#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "pathsamp/drift.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/rng.hpp"

namespace pathsamp {

struct Moments {
    double mean;
    double var;
};

/// Marginal of Brownian motion dX = sqrt(2) dW from X_0 = A conditioned on X_T = B.
inline Moments bridge_moments(double a, double b, double horizon, double t) {
    return {a + (b - a) * t / horizon, 2.0 * t * (horizon - t) / horizon};
}

/// Same, conditioned on a noisy terminal observation y = X_T + sigma z.
inline Moments soft_bridge_moments(double a, double y, double sigma, double horizon, double t) {
    const double total = 2.0 * horizon + sigma * sigma;
    return {a + 2.0 * t / total * (y - a), 2.0 * t - 4.0 * t * t / total};
}

/// log N(y; A, 2T + sigma^2): log evidence of a noisy terminal observation of
/// Brownian motion, i.e. log Z_1/Z_0 when J is the Gaussian log-likelihood
/// without its normalizing constant plus log sqrt(2 pi sigma^2).
inline double soft_pin_log_evidence(double a, double y, double sigma, double horizon) {
    const double v = 2.0 * horizon + sigma * sigma;
    return -0.5 * std::log(2.0 * std::numbers::pi * v) - (y - a) * (y - a) / (2.0 * v);
}

/// log E[exp(-J)] for the same scenario, the quantity exp(A_1) estimates
/// (J = |y - X_T|^2/(2 sigma^2) has no normalizing constant).
inline double soft_pin_log_z_ratio(double a, double y, double sigma, double horizon) {
    return soft_pin_log_evidence(a, y, sigma, horizon) + 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
}

/// Exact h-transform drift for Brownian motion with a Gaussian terminal
/// likelihood: 2 ∂_z log E[exp(-|y - X_T|^2/(2 sigma^2)) | X_t = z].
inline double soft_pin_doob_drift(double z, double t, double y, double sigma, double horizon) {
    return 2.0 * (y - z) / (sigma * sigma + 2.0 * (horizon - t));
}

/// Linear-Gaussian scalar prior dX = -beta X dt + sqrt(2) dW (beta = 0 is BM).
struct LinearGaussianPrior {
    double beta = 0.0;
    double mean0 = 0.0;
    double var0 = 0.0;  // 0 means X_0 = mean0 exactly
};

struct GaussianPathPosterior {
    Vec mean;
    Vec var;
};

namespace detail {

inline void exact_transition(double beta, double dt, double& a, double& q) {
    if (beta == 0.0) {
        a = 1.0;
        q = 2.0 * dt;
    } else {
        a = std::exp(-beta * dt);
        q = (1.0 - a * a) / beta;
    }
}

inline GaussianPathPosterior kalman_rts(const LinearGaussianPrior& prior, const ObservationSet& obs,
                                        const TimeGrid& grid, Eigen::Index component) {
    const std::size_t n = grid.n_nodes();
    double a, q;
    exact_transition(prior.beta, grid.dt(), a, q);
    Vec mf(n), pf(n), mp(n), pp(n);
    double m = prior.mean0, p = prior.var0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j > 0) {
            m = a * m;
            p = a * a * p + q;
        }
        mp(j) = m;
        pp(j) = p;
        if (const Observation* o = obs.at_node(j)) {
            const double r = o->sigma * o->sigma;
            const double k = p / (p + r);
            m += k * (o->value(component) - m);
            p = (1.0 - k) * p;
        }
        mf(j) = m;
        pf(j) = p;
    }
    GaussianPathPosterior out{Vec(n), Vec(n)};
    out.mean(n - 1) = mf(n - 1);
    out.var(n - 1) = pf(n - 1);
    for (std::size_t j = n - 1; j-- > 0;) {
        const double g = pf(j) * a / pp(j + 1);
        out.mean(j) = mf(j) + g * (out.mean(j + 1) - mp(j + 1));
        out.var(j) = pf(j) + g * g * (out.var(j + 1) - pp(j + 1));
    }
    return out;
}

}  // namespace detail

/// Exact per-node posterior marginals of one coordinate (forward filter,
/// backward smoother). The initial law is updated by the observations.
inline GaussianPathPosterior lg_smoother(const LinearGaussianPrior& prior, const ObservationSet& obs,
                                         const TimeGrid& grid, Eigen::Index component = 0) {
    return detail::kalman_rts(prior, obs, grid, component);
}

/// Marginals of the conditioned process whose initial law stays the prior's:
/// X_0 ~ N(mean0, var0) and, given X_0, the path follows the posterior bridge.
/// This is the law generated by the Doob-corrected drift started from rho_0.
inline GaussianPathPosterior lg_smoother_fixed_initial(const LinearGaussianPrior& prior, const ObservationSet& obs,
                                                       const TimeGrid& grid, Eigen::Index component = 0) {
    LinearGaussianPrior pinned = prior;
    pinned.var0 = 0.0;
    pinned.mean0 = 0.0;
    const auto at0 = detail::kalman_rts(pinned, obs, grid, component);
    pinned.mean0 = 1.0;
    const auto at1 = detail::kalman_rts(pinned, obs, grid, component);
    // Conditional mean is affine in X_0 with slope at1 - at0; variance does not depend on X_0.
    const Vec slope = at1.mean - at0.mean;
    return {at0.mean + slope * prior.mean0, at0.var + slope.cwiseAbs2() * prior.var0};
}

struct DoobEstimate {
    Vec drift;
    Vec std_error;
    double max_log_weight;
};

/// 2 ∇_z log E[exp(-sum_{t_k > t} J_k) | X_t = z] by Monte Carlo over
/// reference paths, with a central stencil on z and common random numbers.
inline DoobEstimate doob_drift_mc(const Drift& reference, const ObservationSet& obs, const TimeGrid& grid,
                                  const Vec& z, std::size_t start_node, std::size_t n_paths, std::uint64_t seed,
                                  double stencil = 1e-3) {
    if (start_node >= grid.n_steps()) throw ConfigError("doob_drift_mc: need t < T");
    const auto d = z.size();
    const double dt = grid.dt(), noise = std::sqrt(2.0 * dt);
    DoobEstimate est{Vec::Zero(d), Vec::Zero(d), -std::numeric_limits<double>::infinity()};
    for (Eigen::Index i = 0; i < d; ++i) {
        std::vector<double> lw_plus(n_paths), lw_minus(n_paths);
        for (int side = 0; side < 2; ++side) {
            Vec start = z;
            start(i) += side == 0 ? stencil : -stencil;
            auto& lw = side == 0 ? lw_plus : lw_minus;
            for (std::size_t k = 0; k < n_paths; ++k) {
                const CounterRng rng(seed, k);
                Vec x = start;
                double acc = 0.0;
                for (std::size_t j = start_node; j < grid.n_steps(); ++j) {
                    const Vec b = reference.eval(x, grid.time(j), j);
                    for (Eigen::Index c = 0; c < d; ++c) x(c) += b(c) * dt + noise * rng.normal(j + 1, c);
                    acc -= obs.node_term(j + 1, x);
                }
                lw[k] = acc;
            }
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n_paths; ++k) mx = std::max({mx, lw_plus[k], lw_minus[k]});
        est.max_log_weight = std::max(est.max_log_weight, mx);
        if (!std::isfinite(mx)) throw NumericalError("doob_drift_mc: all path weights underflow");
        double sp = 0.0, sm = 0.0;
        std::vector<double> wp(n_paths), wm(n_paths);
        for (std::size_t k = 0; k < n_paths; ++k) {
            wp[k] = std::exp(lw_plus[k] - mx);
            wm[k] = std::exp(lw_minus[k] - mx);
            sp += wp[k];
            sm += wm[k];
        }
        const double nn = static_cast<double>(n_paths);
        const double ep = sp / nn, em = sm / nn;
        est.drift(i) = 2.0 * (std::log(ep) - std::log(em)) / (2.0 * stencil);
        // Delta method: log ep - log em ≈ mean of (wp/ep - wm/em).
        double s2 = 0.0;
        for (std::size_t k = 0; k < n_paths; ++k) {
            const double qk = wp[k] / ep - wm[k] / em;
            s2 += qk * qk;
        }
        const double se_log = std::sqrt(s2 / (nn - 1.0) / nn);
        est.std_error(i) = 2.0 * se_log / (2.0 * stencil);
    }
    return est;
}

}  // namespace pathsamp
