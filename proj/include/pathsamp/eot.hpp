#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

#include "pathsamp/errors.hpp"
#include "pathsamp/observations.hpp"
#include "pathsamp/parallel.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/potential.hpp"

namespace pathsamp {

/// Dual potential psi on the source support Y for the entropic problem with
/// cost ‖x - y‖²/2, regularization eps and uniform weights.
struct SinkhornDual {
    Mat Y;
    Vec psi;
    Vec phi;  // soft c-transform of psi at the target points
    double eps = 1.0;
    std::size_t iterations = 0;
    double violation = std::numeric_limits<double>::infinity();  // Σ_i |π 1 - 1/n|_i
    bool converged = false;
};

namespace detail {

inline double log_sum_exp(const Eigen::Ref<const Vec>& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().sum());
}

/// ½‖X_i - Y_j‖², n_x x n_y.
inline Mat half_sq_cost(const Mat& X, const Mat& Y) {
    Mat C = 0.5 * ((-2.0 * X.transpose() * Y).colwise() + X.colwise().squaredNorm().transpose());
    C.rowwise() += 0.5 * Y.colwise().squaredNorm();
    return C.cwiseMax(0.0);
}

/// out_i = -eps log((1/n) Σ_j exp((g_j - C_ij)/eps)) over rows of C.
inline Vec soft_min_rows(const Mat& C, const Vec& g, double eps) {
    const double log_n = std::log(static_cast<double>(C.cols()));
    Vec out(C.rows());
    parallel_for(static_cast<std::size_t>(C.rows()), [&](std::size_t ii) {
        const auto i = static_cast<Eigen::Index>(ii);
        const Vec z = (g - C.row(i).transpose()) / eps;
        out(i) = -eps * (log_sum_exp(z) - log_n);
    });
    return out;
}

inline Mat plan(const Mat& C, const Vec& phi, const Vec& psi, double eps) {
    const double n2 = static_cast<double>(C.rows()) * static_cast<double>(C.cols());
    Mat P = (-C).colwise() + phi;
    P.rowwise() += psi.transpose();
    return (P / eps).array().exp().matrix() / n2;
}

}  // namespace detail

/// Alternating soft c-transforms (log-domain Sinkhorn) between X (target) and Y
/// (source), stopped once the X-marginal of the plan is within tol in L1.
/// A non-converged run is returned with converged = false and its violation.
inline SinkhornDual sinkhorn_semidual(const Mat& X, const Mat& Y, double eps, double tol = 1e-9,
                                      std::size_t max_iters = 10000, const Vec* psi0 = nullptr) {
    if (!(eps > 0.0)) throw ConfigError("sinkhorn: eps must be positive");
    if (X.cols() < 1 || X.cols() != Y.cols() || X.rows() != Y.rows())
        throw ConfigError("sinkhorn: clouds must be nonempty with equal size and dimension");
    const Eigen::Index n = X.cols();
    const Mat C = detail::half_sq_cost(X, Y);
    const Mat Ct = C.transpose();
    SinkhornDual d;
    d.Y = Y;
    d.eps = eps;
    d.psi = (psi0 && psi0->size() == n) ? *psi0 : Vec::Zero(n);
    for (std::size_t it = 1; it <= max_iters; ++it) {
        d.phi = detail::soft_min_rows(C, d.psi, eps);
        d.psi = detail::soft_min_rows(Ct, d.phi, eps);
        d.iterations = it;
        if (it % 5 == 0 || it == max_iters) {
            const Vec phi_new = detail::soft_min_rows(C, d.psi, eps);
            // Row sums of the plan: (1/n) exp((phi - phi_new)/eps).
            d.violation = (((d.phi - phi_new) / eps).array().exp() / static_cast<double>(n) - 1.0 / static_cast<double>(n))
                              .abs()
                              .sum();
            if (!std::isfinite(d.violation)) throw NumericalError("sinkhorn: non-finite dual potentials");
            if (d.violation < tol) {
                d.converged = true;
                break;
            }
        }
    }
    d.phi = detail::soft_min_rows(C, d.psi, eps);
    return d;
}

/// Coupling matrix (rows X, columns Y) of a dual solution.
inline Mat sinkhorn_plan(const SinkhornDual& d, const Mat& X) {
    return detail::plan(detail::half_sq_cost(X, d.Y), d.phi, d.psi, d.eps);
}

inline double transport_cost(const SinkhornDual& d, const Mat& X) {
    const Mat C = detail::half_sq_cost(X, d.Y);
    return detail::plan(C, d.phi, d.psi, d.eps).cwiseProduct(C).sum();
}

/// phi*(x) = -eps log((1/n) Σ_j exp((psi_j - ‖x - Y_j‖²/2)/eps)).
inline double soft_c_transform(const SinkhornDual& d, const Vec& x) {
    const Vec z = (d.psi - 0.5 * (d.Y.colwise() - x).colwise().squaredNorm().transpose()) / d.eps;
    return -d.eps * (detail::log_sum_exp(z) - std::log(static_cast<double>(d.Y.cols())));
}

/// ∇phi*(x) = x - softmax-weighted mean of Y.
inline Vec grad_soft_c(const SinkhornDual& d, const Vec& x) {
    Vec z = (d.psi - 0.5 * (d.Y.colwise() - x).colwise().squaredNorm().transpose()) / d.eps;
    z = (z.array() - z.maxCoeff()).exp().matrix();
    return x - d.Y * z / z.sum();
}

inline Mat grad_soft_c_batch(const SinkhornDual& d, const Mat& X) {
    Mat G(X.rows(), X.cols());
    parallel_for(static_cast<std::size_t>(X.cols()), [&](std::size_t jj) {
        const auto j = static_cast<Eigen::Index>(jj);
        G.col(j) = grad_soft_c(d, X.col(j));
    });
    return G;
}

struct EotConfig {
    double eta_factor = 0.5;  // eta = eta_factor * eps
    std::size_t inner_iters = 50;
    double displacement_tol = 1e-6;
    double sinkhorn_tol = 1e-9;
    std::size_t sinkhorn_max_iters = 10000;
    double position_bound = 1e3;
    PotentialPtr potential;  // reference drift; only the Brownian (flat) reference is supported

    void validate() const {
        if (!(eta_factor > 0.0)) throw ConfigError("eot: eta must be positive");
        if (inner_iters < 1) throw ConfigError("eot: inner_iters must be at least 1");
        if (!(sinkhorn_tol > 0.0)) throw ConfigError("eot: sinkhorn tolerance must be positive");
        if (!(position_bound > 0.0)) throw ConfigError("eot: position bound must be positive");
        if (potential && !dynamic_cast<const FlatPotential*>(potential.get()))
            throw ConfigError("eot: the entropic scheme needs the Brownian transition kernel; general reference drifts are not supported");
    }
};

struct EotStepResult {
    Mat X;
    std::size_t iterations = 0;
    double last_displacement = 0.0;
    double worst_violation = 0.0;
    std::vector<double> displacement_trace;
};

/// Inner loop for one interval of length eps:
/// x_j <- x_j - eta (∇phi*(x_j)/eps + 2∇J(x_j)), phi* refit by Sinkhorn against X_prev each time.
inline EotStepResult eot_particle_step(const Mat& X_next, const Mat& X_prev, double eps,
                                       const std::function<Vec(const Vec&)>& grad_J, double eta,
                                       const EotConfig& cfg = {}) {
    cfg.validate();
    if (!(eta > 0.0)) throw ConfigError("eot_particle_step: eta must be positive");
    EotStepResult r;
    r.X = X_next;
    Vec psi;
    for (std::size_t k = 0; k < cfg.inner_iters; ++k) {
        const SinkhornDual d =
            sinkhorn_semidual(r.X, X_prev, eps, cfg.sinkhorn_tol, cfg.sinkhorn_max_iters, psi.size() ? &psi : nullptr);
        psi = d.psi;
        r.worst_violation = std::max(r.worst_violation, d.violation);
        Mat step = grad_soft_c_batch(d, r.X) / eps;
        if (grad_J)
            for (Eigen::Index j = 0; j < r.X.cols(); ++j) step.col(j) += 2.0 * grad_J(r.X.col(j));
        r.X -= eta * step;
        r.iterations = k + 1;
        r.last_displacement = eta * step.colwise().norm().maxCoeff();
        r.displacement_trace.push_back(r.last_displacement);
        const double worst = r.X.colwise().norm().maxCoeff();
        if (!std::isfinite(worst) || worst > cfg.position_bound) {
            std::ostringstream os;
            os << "eot_particle_step: particle left the bound " << cfg.position_bound << " at inner iteration " << k + 1
               << " (|x|=" << worst << ")";
            throw NumericalError(os.str());
        }
        if (r.last_displacement < cfg.displacement_tol) break;
    }
    return r;
}

struct EotTrack {
    std::vector<double> times;
    std::vector<Mat> clouds;
    std::vector<EotStepResult> steps;
};

/// Interval-by-interval scheme between consecutive observation times, starting
/// from X0 at t = 0; each interval is initialized at the previous cloud.
inline EotTrack run_eot(const EotConfig& cfg, const Mat& X0, const ObservationSet& obs) {
    cfg.validate();
    if (obs.empty()) throw ConfigError("eot: at least one observation is required");
    EotTrack tr;
    tr.times.push_back(0.0);
    tr.clouds.push_back(X0);
    for (const auto& o : obs.entries()) {
        const double eps = o.time - tr.times.back();
        if (!(eps > 0.0)) throw ConfigError("eot: observation times must be positive and increasing");
        const Vec y = o.value;
        const double s2 = o.sigma * o.sigma;
        auto gJ = [y, s2](const Vec& x) { return Vec((x - y) / s2); };
        auto st = eot_particle_step(tr.clouds.back(), tr.clouds.back(), eps, gJ, cfg.eta_factor * eps, cfg);
        tr.times.push_back(o.time);
        tr.clouds.push_back(st.X);
        tr.steps.push_back(std::move(st));
    }
    return tr;
}

}  // namespace pathsamp
