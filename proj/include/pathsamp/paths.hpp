#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pathsamp/errors.hpp"

namespace pathsamp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Uniform time grid on [0, T].
class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double horizon, double dt) : horizon_(horizon), dt_(dt) {
        if (!(dt > 0.0) || !(horizon > 0.0)) throw ConfigError("TimeGrid: horizon and dt must be positive");
        const double ratio = horizon / dt;
        const double rounded = std::round(ratio);
        if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio))
            throw ConfigError("TimeGrid: horizon is not an integer multiple of dt");
        if (rounded < 2.0) throw ConfigError("TimeGrid: need at least two steps");
        n_steps_ = static_cast<std::size_t>(rounded);
        dt_ = horizon / static_cast<double>(n_steps_);
    }

    static TimeGrid from_steps(double horizon, std::size_t n_steps) {
        return TimeGrid(horizon, horizon / static_cast<double>(n_steps));
    }

    double horizon() const { return horizon_; }
    double dt() const { return dt_; }
    std::size_t n_steps() const { return n_steps_; }
    std::size_t n_nodes() const { return n_steps_ + 1; }
    double time(std::size_t node) const { return node == n_steps_ ? horizon_ : static_cast<double>(node) * dt_; }

    /// Nearest node to t; throws if t is farther than dt/2 from every node.
    std::size_t snap(double t) const {
        if (t < -0.5 * dt_ || t > horizon_ + 0.5 * dt_) throw ConfigError("time outside grid: " + std::to_string(t));
        const double pos = t / dt_;
        auto node = static_cast<std::size_t>(std::llround(std::max(0.0, pos)));
        if (node > n_steps_) node = n_steps_;
        if (std::abs(time(node) - t) > 0.5 * dt_ * (1.0 + 1e-12))
            throw ConfigError("observation time " + std::to_string(t) + " is not within dt/2 of a grid node");
        return node;
    }

    bool operator==(const TimeGrid& o) const { return n_steps_ == o.n_steps_ && horizon_ == o.horizon_; }

private:
    double horizon_ = 1.0;
    double dt_ = 0.5;
    std::size_t n_steps_ = 2;
};

/// One discretized trajectory: column j holds the state at grid node j.
struct Path {
    Mat values;  // d x (n_steps + 1)
    TimeGrid grid;

    std::size_t dim() const { return static_cast<std::size_t>(values.rows()); }
    auto at(std::size_t node) const { return values.col(static_cast<Eigen::Index>(node)); }
    auto at(std::size_t node) { return values.col(static_cast<Eigen::Index>(node)); }

    void validate() const {
        if (values.cols() != static_cast<Eigen::Index>(grid.n_nodes()))
            throw ConfigError("Path: column count does not match grid");
        if (!values.allFinite()) throw NumericalError("Path: non-finite entries");
    }

    static Path constant(const TimeGrid& grid, const Vec& x) {
        Path p{Mat(x.size(), static_cast<Eigen::Index>(grid.n_nodes())), grid};
        p.values.colwise() = x;
        return p;
    }
};

/// A batch of paths on a shared grid, each with its own RNG stream id.
struct Ensemble {
    std::vector<Path> paths;
    std::vector<std::uint64_t> stream_ids;
    TimeGrid grid;

    std::size_t size() const { return paths.size(); }
    std::size_t dim() const { return paths.empty() ? 0 : paths.front().dim(); }

    /// State of every path at one node, as a d x K matrix.
    Mat slice(std::size_t node) const {
        Mat out(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(size()));
        for (std::size_t k = 0; k < size(); ++k) out.col(static_cast<Eigen::Index>(k)) = paths[k].at(node);
        return out;
    }
};

/// Fixed 17-significant-digit formatting used for every CSV artifact.
inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

/// CSV with columns path_id, t, x_0..x_{d-1}.
inline void write_csv(std::ostream& os, const Ensemble& ens) {
    const std::size_t d = ens.dim();
    os << "path_id,t";
    for (std::size_t i = 0; i < d; ++i) os << ",x_" << i;
    os << '\n';
    for (std::size_t k = 0; k < ens.size(); ++k) {
        const Path& p = ens.paths[k];
        for (std::size_t j = 0; j < p.grid.n_nodes(); ++j) {
            os << k << ',' << format_double(p.grid.time(j));
            for (std::size_t i = 0; i < d; ++i)
                os << ',' << format_double(p.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
            os << '\n';
        }
    }
}

}  // namespace pathsamp
