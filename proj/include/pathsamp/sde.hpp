#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "pathsamp/drift.hpp"
#include "pathsamp/parallel.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/rng.hpp"

namespace pathsamp {

/// Draws X_0 from a path's own stream. Draw group 0 is reserved for it.
using InitialSampler = std::function<Vec(const CounterRng&)>;

inline InitialSampler point_initial(Vec x0) {
    return [x0 = std::move(x0)](const CounterRng&) { return x0; };
}

inline InitialSampler gaussian_initial(Vec mean, double stddev) {
    return [mean = std::move(mean), stddev](const CounterRng& rng) {
        Vec x(mean.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = mean(i) + stddev * rng.normal(0, static_cast<std::uint64_t>(i));
        return x;
    };
}

/// Stream id of path k for a given seed; exposed so refresh/resampling code can
/// derive disjoint streams.
inline CounterRng path_rng(std::uint64_t seed, std::uint64_t path) { return CounterRng(seed, path); }

/// Euler-Maruyama for dX = b dt + sqrt(2) dW, all K paths advanced together.
inline Ensemble simulate_sde(const Drift& drift, const InitialSampler& x0, const TimeGrid& grid, std::size_t n_paths,
                             std::uint64_t seed) {
    if (n_paths == 0) throw ConfigError("simulate_sde: need at least one path");
    std::vector<CounterRng> rngs(n_paths);
    for (std::size_t k = 0; k < n_paths; ++k) rngs[k] = path_rng(seed, k);

    const Vec first = x0(rngs[0]);
    const auto d = first.size();
    const auto K = static_cast<Eigen::Index>(n_paths);
    Mat X(d, K);
    X.col(0) = first;
    for (std::size_t k = 1; k < n_paths; ++k) X.col(static_cast<Eigen::Index>(k)) = x0(rngs[k]);

    Ensemble ens;
    ens.grid = grid;
    ens.paths.assign(n_paths, Path{Mat(d, static_cast<Eigen::Index>(grid.n_nodes())), grid});
    ens.stream_ids.resize(n_paths);
    for (std::size_t k = 0; k < n_paths; ++k) {
        ens.stream_ids[k] = k;
        ens.paths[k].values.col(0) = X.col(static_cast<Eigen::Index>(k));
    }

    const double dt = grid.dt();
    const double noise = std::sqrt(2.0 * dt);
    Mat b;
    for (std::size_t j = 0; j < grid.n_steps(); ++j) {
        drift.eval_batch(X, grid.time(j), j, b);
        if (!b.allFinite()) throw NumericalError("simulate_sde: non-finite drift at node " + std::to_string(j));
        parallel_for(n_paths, [&](std::size_t k) {
            const auto kk = static_cast<Eigen::Index>(k);
            for (Eigen::Index i = 0; i < d; ++i)
                X(i, kk) += b(i, kk) * dt + noise * rngs[k].normal(j + 1, static_cast<std::uint64_t>(i));
            ens.paths[k].values.col(static_cast<Eigen::Index>(j + 1)) = X.col(kk);
        });
    }
    return ens;
}

}  // namespace pathsamp
