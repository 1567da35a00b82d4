#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include "pathsamp/errors.hpp"
#include "pathsamp/kernels.hpp"
#include "pathsamp/parallel.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/rng.hpp"

namespace pathsamp {

/// How the supremum in the variational Fisher representation is evaluated on
/// the perturbed points y ~ N(x_i, sigma² I).
///   Mixture: beta* = ∇log q̂(y) for the whole Gaussian mixture q̂.
///   Component: beta* = (x_i - y)/sigma², the score of y's own component only.
enum class FiForm { Mixture, Component };

struct FiConfig {
    double sigma = 0.4;
    std::size_t m = 30;
    FiForm form = FiForm::Mixture;

    void validate() const {
        if (!(sigma > 0.0)) throw ConfigError("Fisher estimator: sigma must be positive");
        if (m < 1) throw ConfigError("Fisher estimator: m must be at least 1");
    }
};

/// Standard normal perturbations, d x (n m); column i*m + j belongs to sample i.
inline Mat fi_perturbations(Eigen::Index d, Eigen::Index n, std::size_t m, std::uint64_t seed) {
    const auto mm = static_cast<Eigen::Index>(m);
    Mat xi(d, n * mm);
    const CounterRng rng(seed, 0x666973686572ull);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < mm; ++j)
            for (Eigen::Index c = 0; c < d; ++c)
                xi(c, i * mm + j) = rng.normal(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j * d + c));
    return xi;
}

inline Mat perturbed_points(const Mat& X, const Mat& xi, double sigma) {
    const Eigen::Index n = X.cols(), m = xi.cols() / std::max<Eigen::Index>(n, 1);
    Mat Y = sigma * xi;
    for (Eigen::Index i = 0; i < n; ++i) Y.middleCols(i * m, m).colwise() += X.col(i);
    return Y;
}

namespace detail {

/// Softmax responsibilities of the mixture components (columns of X) for each query column of Y.
inline Mat mixture_weights(const Mat& X, const Mat& Y, double sigma, Vec* min_sq = nullptr) {
    Mat L = -detail::sq_dists(X, Y) / (2.0 * sigma * sigma);
    const Eigen::RowVectorXd mx = L.colwise().maxCoeff();
    if (min_sq) *min_sq = -2.0 * sigma * sigma * mx.transpose();
    L.rowwise() -= mx;
    L = L.array().exp().matrix();
    const Eigen::RowVectorXd s = L.colwise().sum();
    L.array().rowwise() /= s.array();
    return L;
}

inline constexpr Eigen::Index kFisherBlock = 256;

}  // namespace detail

/// ∇log q̂(z) for q̂ = (1/n) Σ N(x_i, sigma² I), one column per query.
inline Mat kde_score_batch(const Mat& X, double sigma, const Mat& Q) {
    if (X.cols() < 1) throw ConfigError("kde_score needs at least one sample");
    Vec min_sq;
    const Mat W = detail::mixture_weights(X, Q, sigma, &min_sq);
    for (Eigen::Index q = 0; q < Q.cols(); ++q) {
        // exp underflows past ~745: the mixture density is zero to double precision.
        if (min_sq(q) / (2.0 * sigma * sigma) > 745.0) {
            std::ostringstream os;
            os << "kde_score: all mixture weights underflow; nearest sample at distance " << std::sqrt(min_sq(q));
            throw NumericalError(os.str());
        }
    }
    return -(Q - X * W) / (sigma * sigma);
}

inline Vec kde_score(const Mat& X, double sigma, const Vec& z) { return kde_score_batch(X, sigma, Mat(z)).col(0); }

struct FiValue {
    double value = 0.0;
    Mat grad;  // d x n, gradient w.r.t. the sample positions (Mixture form only)
};

/// (1/(n m)) Σ_ij ½|beta*(y_ij)|² on the perturbed points y_ij = x_i + sigma xi_ij.
/// With the Mixture form the gradient accounts for the dependence of both the
/// points and the mixture on X; the Component form does not depend on X.
inline FiValue fi_value_and_grad(const Mat& X, const Mat& xi, double sigma, FiForm form = FiForm::Mixture,
                                 bool want_grad = true) {
    const Eigen::Index d = X.rows(), n = X.cols(), N = xi.cols();
    if (n < 1 || N % n != 0) throw ConfigError("fi_value_and_grad: perturbations must be n*m columns");
    const Eigen::Index m = N / n;
    const double s2 = sigma * sigma, s4 = s2 * s2;
    FiValue out;
    out.grad = Mat::Zero(d, n);
    if (form == FiForm::Component) {
        out.value = (sigma * xi).squaredNorm() / (2.0 * s4) / static_cast<double>(N);
        return out;
    }
    const Mat Y = perturbed_points(X, xi, sigma);
    const Eigen::Index nb = (N + detail::kFisherBlock - 1) / detail::kFisherBlock;
    std::vector<double> val(static_cast<std::size_t>(nb), 0.0);
    std::vector<Mat> gX(static_cast<std::size_t>(nb));
    Mat gY(d, N);
    parallel_for(static_cast<std::size_t>(nb), [&](std::size_t b) {
        const Eigen::Index c0 = static_cast<Eigen::Index>(b) * detail::kFisherBlock;
        const Eigen::Index B = std::min(detail::kFisherBlock, N - c0);
        const Mat Yb = Y.middleCols(c0, B);
        const Mat W = detail::mixture_weights(X, Yb, sigma);
        const Mat mu = X * W;
        const Mat S = -(Yb - mu) / s2;
        val[b] = 0.5 * S.squaredNorm();
        if (!want_grad) return;
        // a_kb = (x_k - mu_b).s_b
        Mat A = X.transpose() * S;
        A.rowwise() -= mu.cwiseProduct(S).colwise().sum();
        const Mat WA = W.cwiseProduct(A);
        const Eigen::RowVectorXd wa_sum = WA.colwise().sum();
        // C_w s = Σ_k w_k a_k (x_k - mu)
        Mat Cs = X * WA;
        Cs -= (mu.array().rowwise() * wa_sum.array()).matrix();
        gY.middleCols(c0, B) = -(S - Cs / s2) / s2;
        Mat g = S * W.transpose() / s2 + Yb * WA.transpose() / s4;
        g -= (X.array().rowwise() * WA.rowwise().sum().transpose().array()).matrix() / s4;
        gX[b] = std::move(g);
    });
    const double scale = 1.0 / static_cast<double>(N);
    for (double v : val) out.value += v;
    out.value *= scale;
    if (want_grad) {
        for (const auto& g : gX) out.grad += g;
        for (Eigen::Index i = 0; i < n; ++i) out.grad.col(i) += gY.middleCols(i * m, m).rowwise().sum();
        out.grad *= scale;
    }
    return out;
}

/// Randomized estimate of the Fisher information ½∫|∇log q̂|² q̂ of the
/// sigma-mollified empirical measure of the columns of X.
inline double fi_estimate(const Mat& X, const FiConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (X.cols() < 1) throw ConfigError("fi_estimate needs at least one sample");
    const Mat xi = fi_perturbations(X.rows(), X.cols(), cfg.m, seed);
    return fi_value_and_grad(X, xi, cfg.sigma, cfg.form, false).value;
}

/// Monte Carlo evaluation of [K ∇δR(q̂)](z) = ∫ K(x - z) ∇[alpha* - div beta*](x) q̂(x) dx
/// after integrating by parts, with the RBF kernel K(r) = exp(-|r|²/(2 ell²)).
/// Per point y: alpha* = -½|beta*|², beta* = ∇log q̂, and ∇q̂/q̂, ∇²q̂/q̂ from the
/// mixture (or from y's own component for FiForm::Component).
inline Mat first_variation_field(const Mat& X, const Mat& xi, double sigma, double ell, const Mat& Z,
                                 FiForm form = FiForm::Mixture) {
    const Eigen::Index d = X.rows(), n = X.cols(), N = xi.cols();
    if (n < 1 || N % n != 0) throw ConfigError("first_variation_field: perturbations must be n*m columns");
    if (!(ell > 0.0)) throw ConfigError("first_variation_field: kernel bandwidth must be positive");
    const Eigen::Index m = N / n;
    const double s2 = sigma * sigma, s4 = s2 * s2, l2 = ell * ell, l4 = l2 * l2;
    const Mat Y = perturbed_points(X, xi, sigma);
    // Per-point quantities: beta = s, alpha, and H_q beta = (∇²q̂/q̂) beta.
    Mat S(d, N), Hb(d, N);
    Vec alpha(N);
    if (form == FiForm::Component) {
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < m; ++j) {
                const Eigen::Index c = i * m + j;
                const Vec u = Y.col(c) - X.col(i);
                S.col(c) = -u / s2;
                Hb.col(c) = u * u.dot(S.col(c)) / s4 - S.col(c) / s2;
            }
    } else {
        const Eigen::Index nb = (N + detail::kFisherBlock - 1) / detail::kFisherBlock;
        parallel_for(static_cast<std::size_t>(nb), [&](std::size_t b) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(b) * detail::kFisherBlock;
            const Eigen::Index B = std::min(detail::kFisherBlock, N - c0);
            const Mat Yb = Y.middleCols(c0, B);
            const Mat W = detail::mixture_weights(X, Yb, sigma);
            const Mat Sb = -(Yb - X * W) / s2;
            // Σ_k w_k (y - x_k)((y - x_k).beta)/sigma⁴ - beta/sigma²
            Mat Aproj = -(X.transpose() * Sb);
            Aproj.rowwise() += Yb.cwiseProduct(Sb).colwise().sum();
            const Mat WA = W.cwiseProduct(Aproj);
            Mat H = (Yb.array().rowwise() * WA.colwise().sum().array()).matrix() - X * WA;
            Hb.middleCols(c0, B) = H / s4 - Sb / s2;
            S.middleCols(c0, B) = Sb;
        });
    }
    alpha = -0.5 * S.colwise().squaredNorm().transpose();
    const Vec sb = S.colwise().squaredNorm().transpose();  // s.beta with beta = s
    // Per y: K { alpha r/l² - alpha s - (r.b) r/l⁴ + b/l² + r (s.b)/l² + s (r.b)/l² - H b },  r = y - z.
    const Vec c1 = (alpha + sb) / l2;
    const Mat v = -(S.array().rowwise() * alpha.transpose().array()).matrix() + S / l2 - Hb;
    Mat out(d, Z.cols());
    parallel_for(static_cast<std::size_t>(Z.cols()), [&](std::size_t qi) {
        const auto q = static_cast<Eigen::Index>(qi);
        const Mat R = Y.colwise() - Z.col(q);
        const Eigen::ArrayXd k = (-R.colwise().squaredNorm().array() / (2.0 * l2)).exp().transpose();
        const Eigen::ArrayXd rb = R.cwiseProduct(S).colwise().sum().transpose();
        const Eigen::ArrayXd coef_r = k * (c1.array() - rb / l4);
        const Eigen::ArrayXd coef_s = k * rb / l2;
        Vec acc = R * coef_r.matrix() + S * coef_s.matrix() + v * k.matrix();
        out.col(q) = acc / static_cast<double>(N);
    });
    return out;
}

inline Mat first_variation_field(const Mat& X, const FiConfig& cfg, double ell, const Mat& Z, std::uint64_t seed) {
    cfg.validate();
    const Mat xi = fi_perturbations(X.rows(), X.cols(), cfg.m, seed);
    return first_variation_field(X, xi, cfg.sigma, ell > 0.0 ? ell : median_bandwidth(X), Z, cfg.form);
}

}  // namespace pathsamp
