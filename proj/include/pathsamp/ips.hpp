#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <vector>

#include "pathsamp/errors.hpp"
#include "pathsamp/fisher.hpp"
#include "pathsamp/jko.hpp"
#include "pathsamp/kernels.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/potential.hpp"

namespace pathsamp {

/// How the reference part -∇(ΔV - ½|∇V|²) of the force enters.
///   Kernelized: smoothed by the same kernel operator K_q as the Fisher part.
///   Pointwise: evaluated at each particle.
enum class NuTerm { Kernelized, Pointwise };

struct IpsConfig {
    double h = 0.02;
    double horizon = 1.0;
    FiConfig fi{};
    PotentialPtr potential;
    double bandwidth = 0.0;  // 0: median pairwise distance of the current cloud
    NuTerm nu_term = NuTerm::Kernelized;
    double position_bound = 1e3;
    bool terminal_kl = false;

    std::size_t n_steps() const {
        if (!(h > 0.0) || !(horizon > 0.0)) throw ConfigError("ips: h and horizon must be positive");
        const double k = horizon / h, r = std::round(k);
        if (r < 1.0 || std::abs(k - r) > 1e-9 * std::max(1.0, k)) throw ConfigError("ips: horizon/h must be an integer");
        return static_cast<std::size_t>(r);
    }
    TimeGrid grid() const { return TimeGrid(horizon, horizon / static_cast<double>(n_steps())); }
    void validate() const {
        n_steps();
        fi.validate();
        if (!potential) throw ConfigError("ips: reference potential missing");
        if (bandwidth < 0.0) throw ConfigError("ips: bandwidth must be nonnegative");
        if (!(position_bound > 0.0)) throw ConfigError("ips: position bound must be positive");
    }
};

struct PhaseCloud {
    Mat X, V;
    double t = 0.0;
};

namespace detail {

/// ∇(ΔV - ½|∇V|²) at each column.
inline Mat nu_force_grad(const Potential& V, const Mat& Y) {
    Mat G(Y.rows(), Y.cols());
    parallel_for(static_cast<std::size_t>(Y.cols()), [&](std::size_t jj) {
        const auto j = static_cast<Eigen::Index>(jj);
        const Vec y = Y.col(j);
        G.col(j) = V.grad_laplacian(y) - V.hessian(y) * V.grad(y);
    });
    return G;
}

}  // namespace detail

/// Acceleration from the reference and Fisher parts at each particle,
/// K_q ∇δR(q̂)(X_i) - ∇(ΔV - ½|∇V|²)(X_i); the likelihood part is added by run_ips.
inline Mat force_field(const Mat& X, const IpsConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const double ell = cfg.bandwidth > 0.0 ? cfg.bandwidth : median_bandwidth(X);
    const Mat xi = fi_perturbations(X.rows(), X.cols(), cfg.fi.m, seed);
    Mat a = first_variation_field(X, xi, cfg.fi.sigma, ell, X, cfg.fi.form);
    if (cfg.nu_term == NuTerm::Kernelized) {
        const Mat Y = perturbed_points(X, xi, cfg.fi.sigma);
        a -= rbf_smooth(Y, detail::nu_force_grad(*cfg.potential, Y), ell, X);
    } else {
        a -= detail::nu_force_grad(*cfg.potential, X);
    }
    return a;
}

/// X <- X + hV + (h²/2) a,  V <- V + h a.
inline PhaseCloud integrate_step(const PhaseCloud& p, double h, const Mat& a) {
    if (!(h > 0.0)) throw ConfigError("integrate_step: h must be positive");
    return {p.X + h * p.V + (0.5 * h * h) * a, p.V + h * a, p.t + h};
}

inline PhaseCloud integrate_step(const PhaseCloud& p, double h, const std::function<Mat(const PhaseCloud&)>& force) {
    return integrate_step(p, h, force(p));
}

/// SVGD-type move along -K_q ∇log(q̂/nu), applied once at the horizon when enabled.
inline Mat terminal_kl_move(const Mat& X, const IpsConfig& cfg, double step, std::uint64_t seed) {
    const double ell = cfg.bandwidth > 0.0 ? cfg.bandwidth : median_bandwidth(X);
    const Mat xi = fi_perturbations(X.rows(), X.cols(), cfg.fi.m, seed);
    const Mat Y = perturbed_points(X, xi, cfg.fi.sigma);
    Mat gV(Y.rows(), Y.cols());
    for (Eigen::Index j = 0; j < Y.cols(); ++j) gV.col(j) = cfg.potential->grad(Y.col(j));
    // ∫ K(y - z) ∇log(q/nu) q = ∫ [-∇_y K(y - z) + K(y - z) ∇V(y)] q(y) dy, with -∇_y K = K (y - z)/ell².
    Mat out = rbf_smooth(Y, gV, ell, X);
    const Mat Kzy = (-detail::sq_dists(X, Y) / (2.0 * ell * ell)).array().exp().matrix();
    const double inv = 1.0 / (ell * ell * static_cast<double>(Y.cols()));
    out += (Y * Kzy.transpose() - (X.array().rowwise() * Kzy.rowwise().sum().transpose().array()).matrix()) * inv;
    return X - step * out;
}

struct IpsResult {
    MarginalTrack track;
    PhaseCloud final;
};

/// Forward integration from rest. An observation at node k acts as one impulse
/// 2∇J(X_{t_k}) on the velocities, applied through the step starting at t_k
/// (acceleration 2∇J/h for that step); an observation at the horizon changes
/// only the final velocities.
inline IpsResult run_ips(const IpsConfig& cfg, const Mat& X0, const ObservationSet& obs, std::uint64_t seed) {
    cfg.validate();
    const std::size_t steps = cfg.n_steps();
    const TimeGrid grid = cfg.grid();
    const double h = grid.dt();
    IpsResult res;
    PhaseCloud p{X0, Mat::Zero(X0.rows(), X0.cols()), 0.0};
    res.track.times.push_back(0.0);
    res.track.clouds.push_back(p.X);
    auto impulse = [&](std::size_t node, const Mat& X) {
        Mat g = Mat::Zero(X.rows(), X.cols());
        if (!obs.at_node(node)) return g;
        for (Eigen::Index i = 0; i < X.cols(); ++i) g.col(i) = 2.0 * obs.node_grad(node, X.col(i));
        return g;
    };
    for (std::size_t k = 0; k < steps; ++k) {
        Mat a = force_field(p.X, cfg, jko_step_seed(seed, k));
        if (obs.at_node(k)) a += impulse(k, p.X) / h;
        p = integrate_step(p, h, a);
        p.t = grid.time(k + 1);
        const double worst = p.X.colwise().norm().maxCoeff();
        if (!std::isfinite(worst) || worst > cfg.position_bound) {
            std::ostringstream os;
            os << "run_ips: particle left the bound " << cfg.position_bound << " at step " << k + 1 << " (t=" << p.t
               << ", |x|=" << worst << ")";
            throw NumericalError(os.str());
        }
        res.track.times.push_back(p.t);
        res.track.clouds.push_back(p.X);
    }
    if (obs.at_node(steps)) p.V += impulse(steps, p.X);
    if (cfg.terminal_kl) {
        p.X = terminal_kl_move(p.X, cfg, h, jko_step_seed(seed, steps));
        res.track.clouds.back() = p.X;
    }
    res.final = std::move(p);
    return res;
}

}  // namespace pathsamp
