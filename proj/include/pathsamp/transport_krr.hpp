#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "pathsamp/kernels.hpp"
#include "pathsamp/transport.hpp"

namespace pathsamp {

enum class KrrCoupling { Joint, PerNode };

struct KernelSpec {
    double bandwidth = 0.0;        // <= 0 selects the median heuristic per node
    double ridge_per_path = 1e-3;  // lambda = ridge_per_path * N
    KrrCoupling coupling = KrrCoupling::Joint;
};

/// Gram matrix of S_t S_t^* for the RBF kernel exp(-|x-y|^2/(2 l^2)):
///   G_ij = -1/4 r_i^T ∇_{x_j}k + 1/4 k r_i^T r_j + 1/4 ∇_{x_i}·∇_{x_j}k - 1/4 ∇_{x_i}k^T r_j
/// where S_t v (i) = -1/2 r_i^T v(x_i) + 1/2 div v(x_i).
inline Mat build_gram(const Mat& X, const Mat& R, double ell) {
    const Eigen::Index N = X.cols();
    if (N < 1) throw ConfigError("build_gram needs at least one point");
    const double l2 = ell * ell;
    const double d = static_cast<double>(X.rows());
    const Mat D2 = detail::sq_dists(X, X);
    const Mat K = (-D2 / (2.0 * l2)).array().exp().matrix();
    const Mat M = X.transpose() * R;  // M_ij = x_i . r_j
    const Vec md = M.diagonal();
    // delta = x_i - x_j:  delta.(r_j - r_i) = M_ij + M_ji - M_jj - M_ii.
    Mat cross = M + M.transpose();
    cross.colwise() -= md;
    cross.rowwise() -= md.transpose();
    Mat inner = R.transpose() * R;
    inner.array() += d / l2;
    inner -= D2 / (l2 * l2);
    inner += cross / l2;
    Mat G = 0.25 * K.cwiseProduct(inner);
    return 0.5 * (G + G.transpose());
}

/// c = (lambda I + G)^{-1} j.
inline Vec solve_update(const Mat& gram, const Vec& j, double lambda) {
    if (!(lambda > 0.0)) throw ConfigError("ridge parameter must be positive");
    const Mat A = gram + lambda * Mat::Identity(gram.rows(), gram.cols());
    Eigen::LDLT<Mat> ldlt(A);
    Vec c = ldlt.solve(j);
    if (ldlt.info() != Eigen::Success || !c.allFinite()) throw NumericalError("KRR linear solve failed");
    return c;
}

/// Per-node support data and coefficients.
struct KrrSolution {
    std::vector<Mat> support;   // d x N per node
    std::vector<Mat> residual;  // r = b - xdot per node
    std::vector<double> bandwidth;
    std::vector<Vec> coeffs;
    std::vector<double> condition;  // one entry for a joint solve, else one per node
};

/// v_t(x) = sum_i c_i (1/2 ∇_{x_i}k(x, x_i) - 1/2 k(x, x_i) r_i) and its divergence, for a batch of queries.
inline void eval_v_batch(const KrrSolution& sol, std::size_t node, const Mat& Q, Mat& out, Vec* div = nullptr) {
    const Mat& Xs = sol.support[node];
    const Mat& Rs = sol.residual[node];
    const double l2 = sol.bandwidth[node] * sol.bandwidth[node];
    const double d = static_cast<double>(Q.rows());
    const Mat D2 = detail::sq_dists(Xs, Q);  // N x B
    const Mat K = (-D2 / (2.0 * l2)).array().exp().matrix();
    const Mat Kc = K.array().colwise() * sol.coeffs[node].array();  // c_i k_iq
    const Vec w = Kc.colwise().sum().transpose();
    // ∇_{x_i}k(x, x_i) = k (x - x_i)/l^2.
    out = (0.5 / l2) * (Q.array().rowwise() * w.transpose().array()).matrix() - (0.5 / l2) * Xs * Kc - 0.5 * Rs * Kc;
    if (div) {
        // div = 1/2 sum_i c_i k [d/l^2 - |x - x_i|^2/l^4 + (x - x_i).r_i/l^2].
        const Mat xr = Rs.transpose() * Q;  // r_i . x_q
        const Vec xir = Xs.cwiseProduct(Rs).colwise().sum().transpose();
        Mat bracket = (-D2 / (l2 * l2)).array() + d / l2;
        bracket += (xr.colwise() - xir) / l2;
        *div = 0.5 * Kc.cwiseProduct(bracket).colwise().sum().transpose();
    }
}

/// The increment field v_t; zero at the terminal node.
class KrrField final : public Drift {
public:
    explicit KrrField(std::shared_ptr<const KrrSolution> sol) : sol_(std::move(sol)) {}

    Vec eval(const Vec& x, double t, std::size_t node) const override {
        Mat out;
        eval_batch(Mat(x), t, node, out);
        return out.col(0);
    }
    double divergence(const Vec& x, double t, std::size_t node) const override {
        Vec d;
        divergence_batch(Mat(x), t, node, d);
        return d(0);
    }
    void eval_batch(const Mat& X, double, std::size_t node, Mat& out) const override {
        if (node >= sol_->support.size()) {
            out.setZero(X.rows(), X.cols());
            return;
        }
        eval_v_batch(*sol_, node, X, out);
    }
    void divergence_batch(const Mat& X, double, std::size_t node, Vec& out) const override {
        if (node >= sol_->support.size()) {
            out.setZero(X.cols());
            return;
        }
        Mat tmp;
        eval_v_batch(*sol_, node, X, tmp, &out);
    }

    const KrrSolution& solution() const { return *sol_; }

private:
    std::shared_ptr<const KrrSolution> sol_;
};

namespace detail {

inline double sym_condition(const Mat& G, double lambda) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(G, Eigen::EigenvaluesOnly);
    return (eig.eigenvalues().maxCoeff() + lambda) / (std::max(0.0, eig.eigenvalues().minCoeff()) + lambda);
}

}  // namespace detail

/// Fits the increment by kernel ridge regression of h onto -(J - mean J).
/// Joint: h sums the per-node operators, so one coefficient vector solves
/// against sum_t dt G_t. PerNode: each node solves its own system against j/T.
inline std::shared_ptr<KrrSolution> krr_fit(const Ensemble& ens, const Drift& drift, const std::vector<double>& J,
                                            const KernelSpec& spec, bool log_condition = false) {
    const std::size_t N = ens.size(), n = ens.grid.n_steps();
    if (N < 1) throw ConfigError("KRR needs at least one path");
    if (J.size() != N) throw ConfigError("KRR: J size does not match the ensemble");
    const double dt = ens.grid.dt();
    auto sol = std::make_shared<KrrSolution>();
    sol->support.resize(n);
    sol->residual.resize(n);
    sol->bandwidth.resize(n);
    sol->coeffs.resize(n);
    const auto NN = static_cast<Eigen::Index>(N);
    const Mat P = Mat::Identity(NN, NN) - Mat::Constant(NN, NN, 1.0 / static_cast<double>(N));
    Vec j(NN);
    double jm = 0.0;
    for (double v : J) jm += v;
    jm /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) j(static_cast<Eigen::Index>(i)) = -(J[i] - jm);
    const double lambda = spec.ridge_per_path * static_cast<double>(N);
    const bool joint = spec.coupling == KrrCoupling::Joint;
    std::vector<Mat> grams(n);
    if (!joint && log_condition) sol->condition.resize(n);
    parallel_for(n, [&](std::size_t t) {
        Mat X = ens.slice(t);
        Mat b;
        drift.eval_batch(X, ens.grid.time(t), t, b);
        Mat R = b - (ens.slice(t + 1) - X) / dt;
        const double ell = spec.bandwidth > 0.0 ? spec.bandwidth : median_bandwidth(X);
        Mat G = build_gram(X, R, ell);
        sol->support[t] = std::move(X);
        sol->residual[t] = std::move(R);
        sol->bandwidth[t] = ell;
        if (joint) {
            grams[t] = std::move(G);
        } else {
            G = P * G * P;
            G = 0.5 * (G + G.transpose());
            sol->coeffs[t] = solve_update(G, j / ens.grid.horizon(), lambda);
            if (log_condition) sol->condition[t] = detail::sym_condition(G, lambda);
        }
    });
    if (joint) {
        Mat G = Mat::Zero(NN, NN);
        for (const auto& g : grams) G += dt * g;
        G = P * G * P;
        G = 0.5 * (G + G.transpose());
        const Vec c = solve_update(G, j, lambda);
        for (auto& ct : sol->coeffs) ct = c;
        if (log_condition) sol->condition.push_back(detail::sym_condition(G, lambda));
    }
    return sol;
}

/// S_t v at the support points of node t: -1/2 r_i.v(x_i) + 1/2 div v(x_i).
inline Vec apply_operator(const KrrSolution& sol, std::size_t node, const Drift& v, double t) {
    const Mat& X = sol.support[node];
    Mat out;
    Vec div;
    v.eval_batch(X, t, node, out);
    v.divergence_batch(X, t, node, div);
    return -0.5 * sol.residual[node].cwiseProduct(out).colwise().sum().transpose() + 0.5 * div;
}

inline IncrementLearner krr_learner(const KernelSpec& spec) {
    return {[spec](const Ensemble& ens, const Drift& drift, const std::vector<double>& J, std::uint64_t) {
        auto sol = krr_fit(ens, drift, J, spec);
        auto field = std::make_shared<KrrField>(sol);
        // Fit quality in the same units as the NN loss.
        std::vector<double> h(ens.size(), 0.0), zero(ens.size(), 0.0);
        for (std::size_t t = 0; t < ens.grid.n_steps(); ++t) {
            const Vec st = apply_operator(*sol, t, *field, ens.grid.time(t));
            for (std::size_t k = 0; k < ens.size(); ++k) h[k] += ens.grid.dt() * st(static_cast<Eigen::Index>(k));
        }
        TrainReport rep{consistency_loss(zero, J), consistency_loss(h, J)};
        return std::pair<DriftPtr, TrainReport>{field, rep};
    }};
}

}  // namespace pathsamp
