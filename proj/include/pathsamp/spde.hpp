#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "pathsamp/functionals.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/parallel.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/potential.hpp"
#include "pathsamp/rng.hpp"
#include "pathsamp/transport.hpp"

namespace pathsamp {

/// ½ d²x/dt² - ½ u∇u - ½ ∇(∇·u) + Σ_k (y_k - x(t_k))/σ_k² at interior nodes,
/// for u = -scale ∇V. Returns d x (n_steps - 1).
inline Mat variational_grad(const Path& path, const Potential& V, double scale = 1.0,
                            const ObservationSet* obs = nullptr) {
    const TimeGrid& g = path.grid;
    const std::size_t n = g.n_steps();
    const double dt = g.dt();
    Mat out(path.values.rows(), static_cast<Eigen::Index>(n - 1));
    for (std::size_t j = 1; j < n; ++j) {
        const Vec x = path.at(j);
        const Vec lap = (path.at(j + 1) - 2.0 * x + path.at(j - 1)) / (dt * dt);
        // u∇u = scale² ∇²V ∇V, ∇(∇·u) = -scale ∇ΔV
        Vec v = 0.5 * lap - 0.5 * scale * scale * (V.hessian(x) * V.grad(x)) + 0.5 * scale * V.grad_laplacian(x);
        if (obs)
            if (const Observation* o = obs->at_node(j)) v += (o->value - x) / (o->sigma * o->sigma);
        out.col(static_cast<Eigen::Index>(j - 1)) = v;
    }
    return out;
}

/// Transition path target pi_s ∝ exp(-s J~(x) - I~(x)) on paths pinned at A and B.
/// The state holds the interior nodes only, as a d x (n_steps - 1) matrix.
class TpsTarget {
public:
    TpsTarget(PotentialPtr V, Vec A, Vec B, TimeGrid grid)
        : V_(std::move(V)), A_(std::move(A)), B_(std::move(B)), grid_(grid) {
        if (!V_) throw ConfigError("TpsTarget needs a potential");
        if (A_.size() != B_.size() || A_.size() == 0) throw ConfigError("TpsTarget: endpoint dimensions differ");
        if (grid_.n_steps() < 2) throw ConfigError("TpsTarget needs at least one interior node");
    }

    const Potential& potential() const { return *V_; }
    const Vec& start() const { return A_; }
    const Vec& end() const { return B_; }
    const TimeGrid& grid() const { return grid_; }
    Eigen::Index dim() const { return A_.size(); }
    Eigen::Index interior() const { return static_cast<Eigen::Index>(grid_.n_steps() - 1); }

    Path full(const Mat& x) const {
        Path p{Mat(dim(), interior() + 2), grid_};
        p.values.col(0) = A_;
        p.values.middleCols(1, interior()) = x;
        p.values.col(interior() + 1) = B_;
        return p;
    }
    Mat interior_of(const Path& p) const { return p.values.middleCols(1, interior()); }

    /// Boundary contribution of the discrete Laplacian: A x_full restricted to the interior = A x + bc.
    Mat boundary_term() const {
        const double h2 = grid_.dt() * grid_.dt();
        Mat bc = Mat::Zero(dim(), interior());
        bc.col(0) += A_ / h2;
        bc.col(interior() - 1) += B_ / h2;
        return bc;
    }

    double j_tilde(const Mat& x) const { return tps_likelihood(full(x), *V_); }

    /// (1/(4 dt)) Σ |x_{j+1} - x_j|², the discrete Brownian bridge action.
    double i_tilde(const Mat& x) const {
        const Path p = full(x);
        const Mat d = p.values.rightCols(interior() + 1) - p.values.leftCols(interior() + 1);
        return d.squaredNorm() / (4.0 * grid_.dt());
    }

    double log_density(const Mat& x, double s) const {
        return (s == 0.0 ? 0.0 : -s * j_tilde(x)) - i_tilde(x);
    }

    /// M(x) = ½ u∇u + ½ ∇(∇·u) with u = -s∇V.
    Mat drift_term(const Mat& x, double s) const {
        Mat M(dim(), interior());
        if (s == 0.0) {
            M.setZero();
            return M;
        }
        for (Eigen::Index j = 0; j < interior(); ++j) {
            const Vec xj = x.col(j);
            M.col(j) = 0.5 * s * s * (V_->hessian(xj) * V_->grad(xj)) - 0.5 * s * V_->grad_laplacian(xj);
        }
        return M;
    }

    /// Exact draw from the discrete Brownian bridge (diffusion 2) between A and B.
    Mat sample_bridge(const CounterRng& rng, std::uint64_t group = 0) const {
        const double dt = grid_.dt(), T = grid_.horizon();
        Mat x(dim(), interior());
        Vec prev = A_;
        for (Eigen::Index j = 0; j < interior(); ++j) {
            const double t = grid_.time(static_cast<std::size_t>(j));
            const double rem = T - t;
            const Vec mean = prev + (B_ - prev) * dt / rem;
            const double sd = std::sqrt(2.0 * dt * (rem - dt) / rem);
            for (Eigen::Index c = 0; c < dim(); ++c)
                x(c, j) = mean(c) + sd * rng.normal(group, static_cast<std::uint64_t>(c * interior() + j));
            prev = x.col(j);
        }
        return x;
    }

private:
    PotentialPtr V_;
    Vec A_, B_;
    TimeGrid grid_;
};

namespace detail {

/// Rows of X times (I + c A) with A = tridiag(1, -2, 1)/dt².
inline Mat apply_cn(const Mat& X, double c) {
    const Eigen::Index m = X.cols();
    Mat out = X * (1.0 - 2.0 * c);
    out.rightCols(m - 1) += c * X.leftCols(m - 1);
    out.leftCols(m - 1) += c * X.rightCols(m - 1);
    return out;
}

/// Solves rows of Y = X (I + c A) for X; the matrix is symmetric tridiagonal.
inline Mat solve_cn(const Mat& Y, double c) {
    const Eigen::Index m = Y.cols();
    const double diag = 1.0 - 2.0 * c, off = c;
    std::vector<double> cp(static_cast<std::size_t>(m));
    Mat X(Y.rows(), m);
    Mat dp(Y.rows(), m);
    cp[0] = off / diag;
    dp.col(0) = Y.col(0) / diag;
    for (Eigen::Index j = 1; j < m; ++j) {
        const double denom = diag - off * cp[static_cast<std::size_t>(j - 1)];
        if (!(std::abs(denom) > 0.0)) throw NumericalError("tridiagonal solve: zero pivot");
        cp[static_cast<std::size_t>(j)] = off / denom;
        dp.col(j) = (Y.col(j) - off * dp.col(j - 1)) / denom;
    }
    X.col(m - 1) = dp.col(m - 1);
    for (Eigen::Index j = m - 1; j-- > 0;) X.col(j) = dp.col(j) - cp[static_cast<std::size_t>(j)] * X.col(j + 1);
    return X;
}

}  // namespace detail

struct CnProposal {
    Mat proposal;
    double log_q_fwd;
    double log_q_rev;
};

/// log q(x -> x') = -(dt/(4 ds)) |L x' - R x - ½ ds bc + M(x) ds|².
inline double cn_log_q(const TpsTarget& tgt, const Mat& from, const Mat& to, double s, double ds) {
    const double dt = tgt.grid().dt();
    const double c = 0.25 * ds / (dt * dt);
    const Mat res = detail::apply_cn(to, -c) - detail::apply_cn(from, c) - 0.5 * ds * tgt.boundary_term() +
                    ds * tgt.drift_term(from, s);
    return -dt / (4.0 * ds) * res.squaredNorm();
}

/// L x' = R x + ½ ds bc - M(x) ds + sqrt(2 ds/dt) zeta.
inline CnProposal cn_propose(const TpsTarget& tgt, const Mat& x, double s, double ds, const Mat& zeta) {
    if (!(ds > 0.0)) throw ConfigError("cn_propose: ds must be positive");
    const double dt = tgt.grid().dt();
    const double c = 0.25 * ds / (dt * dt);
    const Mat rhs = detail::apply_cn(x, c) + 0.5 * ds * tgt.boundary_term() - ds * tgt.drift_term(x, s) +
                    std::sqrt(2.0 * ds / dt) * zeta;
    CnProposal out{detail::solve_cn(rhs, -c), 0.0, 0.0};
    if (!out.proposal.allFinite()) throw NumericalError("cn_propose: non-finite proposal");
    out.log_q_fwd = cn_log_q(tgt, x, out.proposal, s, ds);
    out.log_q_rev = cn_log_q(tgt, out.proposal, x, s, ds);
    return out;
}

inline Mat draw_zeta(const CounterRng& rng, std::uint64_t group, Eigen::Index d, Eigen::Index m) {
    Mat z(d, m);
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index c = 0; c < d; ++c) z(c, j) = rng.normal(group, static_cast<std::uint64_t>(c * m + j));
    return z;
}

struct MhResult {
    bool accepted;
    double log_alpha;
};

/// Accepts `proposal` into `path` with probability min(1, exp(log ratio + log q_rev - log q_fwd)).
inline MhResult mh_accept(Mat& path, const Mat& proposal, double log_target_ratio, double log_q_fwd, double log_q_rev,
                          double uniform) {
    const double log_alpha = log_target_ratio + log_q_rev - log_q_fwd;
    const bool ok = std::isfinite(log_alpha) && (log_alpha >= 0.0 || std::log(uniform) < log_alpha);
    if (ok) path = proposal;
    return {ok, log_alpha};
}

/// One proposal + MH step targeting pi_s.
inline MhResult spde_mh_step(const TpsTarget& tgt, Mat& x, double s, double ds, const CounterRng& rng,
                             std::uint64_t group) {
    const CnProposal p = cn_propose(tgt, x, s, ds, draw_zeta(rng, group, tgt.dim(), tgt.interior()));
    const double ratio = tgt.log_density(p.proposal, s) - tgt.log_density(x, s);
    return mh_accept(x, p.proposal, ratio, p.log_q_fwd, p.log_q_rev, rng.uniform(group, 0x6d68ull));
}

struct JarzynskiConfig {
    double ds = 0.01;
    std::size_t n_walkers = 100;
    std::vector<double> snapshots;  // s values at which walker paths are recorded
};

struct JarzynskiResult {
    std::vector<double> log_weights;  // A_1 per walker
    std::vector<double> acceptance;   // per walker
    std::vector<Mat> finals;          // interior paths at s = 1
    std::vector<std::pair<double, std::vector<Mat>>> snapshots;
    double log_z = 0.0;               // log (1/K) Σ exp(A_1^k)
    double z_ratio = 0.0;
    double z_std_error = 0.0;         // jackknife
    double ess = 0.0;
    bool low_ess = false;

    /// Self-normalized Σ h(X^k) e^{A^k} / Σ e^{A^k}.
    template <class F>
    double weighted_mean(F&& statistic) const {
        const double mx = *std::max_element(log_weights.begin(), log_weights.end());
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < finals.size(); ++k) {
            const double w = std::exp(log_weights[k] - mx);
            num += w * statistic(finals[k]);
            den += w;
        }
        return num / den;
    }
};

namespace detail {

inline double log_mean_exp(const std::vector<double>& a, std::size_t skip = static_cast<std::size_t>(-1)) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < a.size(); ++k)
        if (k != skip) mx = std::max(mx, a[k]);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < a.size(); ++k)
        if (k != skip) {
            s += std::exp(a[k] - mx);
            ++n;
        }
    return mx + std::log(s / static_cast<double>(n));
}

inline constexpr std::uint64_t kSpdeGroupBase = 1ull << 32;

}  // namespace detail

/// Fills the estimator summaries from log_weights.
inline void summarize_weights(JarzynskiResult& r) {
    const std::size_t K = r.log_weights.size();
    r.log_z = detail::log_mean_exp(r.log_weights);
    r.z_ratio = std::exp(r.log_z);
    if (K > 1) {
        std::vector<double> loo(K);
        double mean = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            loo[k] = std::exp(detail::log_mean_exp(r.log_weights, k));
            mean += loo[k];
        }
        mean /= static_cast<double>(K);
        double ss = 0.0;
        for (double v : loo) ss += (v - mean) * (v - mean);
        r.z_std_error = std::sqrt(static_cast<double>(K - 1) / static_cast<double>(K) * ss);
    }
    const double mx = *std::max_element(r.log_weights.begin(), r.log_weights.end());
    double s1 = 0.0, s2 = 0.0;
    for (double a : r.log_weights) {
        const double w = std::exp(a - mx);
        s1 += w;
        s2 += w * w;
    }
    r.ess = s1 * s1 / s2;
    r.low_ess = r.ess < 2.0;
}

/// Annealed SPDE + MH from the Brownian bridge with Jarzynski weights.
/// Walker k uses stream k of `seed`; group 0 draws the initial bridge.
inline JarzynskiResult jarzynski_run(const TpsTarget& tgt, const JarzynskiConfig& cfg, std::uint64_t seed) {
    TransportConfig steps_check;
    steps_check.ds = cfg.ds;
    const std::size_t n = steps_check.n_steps();
    if (cfg.n_walkers < 1) throw ConfigError("jarzynski_run needs at least one walker");
    const std::size_t K = cfg.n_walkers;
    JarzynskiResult r;
    r.log_weights.assign(K, 0.0);
    r.acceptance.assign(K, 0.0);
    r.finals.resize(K);
    std::vector<std::size_t> snap_step;
    for (double s : cfg.snapshots) {
        snap_step.push_back(static_cast<std::size_t>(std::llround(s / cfg.ds)));
        r.snapshots.push_back({s, std::vector<Mat>(K)});
    }
    parallel_for(K, [&](std::size_t k) {
        const CounterRng rng(seed, k);
        Mat x = tgt.sample_bridge(rng, 0);
        double A = 0.0;
        std::size_t acc = 0;
        for (std::size_t i = 0; i <= n; ++i) {
            for (std::size_t q = 0; q < snap_step.size(); ++q)
                if (snap_step[q] == i) r.snapshots[q].second[k] = x;
            if (i == n) break;
            const double s = static_cast<double>(i) * cfg.ds;
            if (spde_mh_step(tgt, x, s, cfg.ds, rng, detail::kSpdeGroupBase + i).accepted) ++acc;
            A -= cfg.ds * tgt.j_tilde(x);
        }
        if (!std::isfinite(A)) throw NumericalError("jarzynski_run: non-finite work");
        r.log_weights[k] = A;
        r.acceptance[k] = static_cast<double>(acc) / static_cast<double>(n);
        r.finals[k] = std::move(x);
    });
    summarize_weights(r);
    return r;
}

/// MCMC refresh for the TPS annealing path: `sweeps` SPDE+MH steps per path
/// targeting pi_s, with algorithmic step `ds_mcmc`.
inline EnsembleRefresh tps_refresh(std::shared_ptr<const TpsTarget> tgt, std::size_t sweeps, double ds_mcmc) {
    return [tgt, sweeps, ds_mcmc](Ensemble& ens, double s, std::uint64_t seed) {
        parallel_for(ens.size(), [&](std::size_t k) {
            const CounterRng rng(seed ^ 0x7265667265736821ull, ens.stream_ids.empty() ? k : ens.stream_ids[k]);
            Mat x = tgt->interior_of(ens.paths[k]);
            for (std::size_t q = 0; q < sweeps; ++q) spde_mh_step(*tgt, x, s, ds_mcmc, rng, detail::kSpdeGroupBase + q);
            ens.paths[k] = tgt->full(x);
        });
    };
}

}  // namespace pathsamp
