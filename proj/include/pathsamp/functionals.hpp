#pragma once

#include <cstddef>

#include "pathsamp/drift.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/potential.hpp"

namespace pathsamp {

/// Discrete Onsager-Machlup action: left Riemann sum of
/// 1/2 ∫ (1/2 |xdot - u|^2 + 1/2 div u) dt with forward-difference velocity.
inline double om_action(const Path& path, const Drift& drift) {
    const TimeGrid& g = path.grid;
    const double dt = g.dt();
    double sum = 0.0;
    for (std::size_t j = 0; j < g.n_steps(); ++j) {
        const Vec x = path.at(j);
        const Vec vel = (path.at(j + 1) - x) / dt;
        const double t = g.time(j);
        sum += 0.5 * (vel - drift.eval(x, t, j)).squaredNorm() + 0.5 * drift.divergence(x, t, j);
    }
    return 0.5 * sum * dt;
}

/// Sum over observations of |y_k - x(t_k)|^2/(2 sigma^2).
inline double likelihood_J(const Path& path, const ObservationSet& obs) {
    double sum = 0.0;
    for (const auto& o : obs.entries()) sum += (o.value - path.at(o.node)).squaredNorm() / (2.0 * o.sigma * o.sigma);
    return sum;
}

/// Left Riemann sum of 1/2 ∫ (1/2 |∇V|^2 - ΔV) dt.
inline double tps_likelihood(const Path& path, const Potential& v) {
    const TimeGrid& g = path.grid;
    double sum = 0.0;
    for (std::size_t j = 0; j < g.n_steps(); ++j) {
        const Vec x = path.at(j);
        sum += 0.5 * v.grad(x).squaredNorm() - v.laplacian(x);
    }
    return 0.5 * sum * g.dt();
}

}  // namespace pathsamp
