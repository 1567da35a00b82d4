#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "pathsamp/paths.hpp"

namespace pathsamp {

/// One noisy point observation y = x(t) + sigma z, snapped to a grid node.
struct Observation {
    std::size_t node;
    double time;
    Vec value;
    double sigma;
};

/// Observations on a fixed grid. Each entry may override the shared noise scale.
class ObservationSet {
public:
    struct Input {
        double time;
        Vec value;
        double sigma = 0.0;  // 0 means use the shared scale
    };

    ObservationSet() = default;

    ObservationSet(const TimeGrid& grid, std::vector<Input> entries, double sigma) : sigma_(sigma) {
        if (!(sigma > 0.0)) throw ConfigError("observation noise sigma must be positive");
        std::stable_sort(entries.begin(), entries.end(),
                         [](const Input& a, const Input& b) { return a.time < b.time; });
        for (auto& e : entries) {
            const double s = e.sigma > 0.0 ? e.sigma : sigma;
            const std::size_t node = grid.snap(e.time);
            if (!entries_.empty() && node <= entries_.back().node)
                throw ConfigError("observation times must map to strictly increasing grid nodes");
            if (!entries_.empty() && e.value.size() != entries_.front().value.size())
                throw ConfigError("observation dimensions differ");
            entries_.push_back({node, grid.time(node), std::move(e.value), s});
        }
    }

    const std::vector<Observation>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }
    std::size_t size() const { return entries_.size(); }
    double sigma() const { return sigma_; }

    /// Observation at this node, or nullptr.
    const Observation* at_node(std::size_t node) const {
        for (const auto& e : entries_)
            if (e.node == node) return &e;
        return nullptr;
    }

    /// ‖y - x‖^2/(2 sigma^2) for the observation at `node`, 0 if none.
    double node_term(std::size_t node, const Vec& x) const {
        const Observation* o = at_node(node);
        return o ? (o->value - x).squaredNorm() / (2.0 * o->sigma * o->sigma) : 0.0;
    }

    /// ∇_x of node_term.
    Vec node_grad(std::size_t node, const Vec& x) const {
        const Observation* o = at_node(node);
        if (!o) return Vec::Zero(x.size());
        return (x - o->value) / (o->sigma * o->sigma);
    }

private:
    std::vector<Observation> entries_;
    double sigma_ = 1.0;
};

}  // namespace pathsamp
