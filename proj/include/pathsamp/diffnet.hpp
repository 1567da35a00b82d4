#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pathsamp/errors.hpp"
#include "pathsamp/paths.hpp"
#include "pathsamp/rng.hpp"

namespace pathsamp {

enum class Activation { ReLU, Tanh, Softplus };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::ReLU: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Softplus: return "softplus";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    throw ConfigError("unknown activation: " + s);
}

namespace detail {

inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Fills sigma(z), sigma'(z) and (optionally) sigma''(z) elementwise.
inline void activate(Activation a, const Mat& z, Mat& h, Mat& d1, Mat* d2) {
    h.resize(z.rows(), z.cols());
    d1.resize(z.rows(), z.cols());
    if (d2) d2->resize(z.rows(), z.cols());
    const Eigen::Index n = z.size();
    const double* zp = z.data();
    double* hp = h.data();
    double* d1p = d1.data();
    double* d2p = d2 ? d2->data() : nullptr;
    switch (a) {
        case Activation::ReLU:
            for (Eigen::Index i = 0; i < n; ++i) {
                const bool on = zp[i] > 0.0;
                hp[i] = on ? zp[i] : 0.0;
                d1p[i] = on ? 1.0 : 0.0;
                if (d2p) d2p[i] = 0.0;
            }
            break;
        case Activation::Tanh:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double t = std::tanh(zp[i]);
                hp[i] = t;
                d1p[i] = 1.0 - t * t;
                if (d2p) d2p[i] = -2.0 * t * (1.0 - t * t);
            }
            break;
        case Activation::Softplus:
            for (Eigen::Index i = 0; i < n; ++i) {
                const double s = sigmoid(zp[i]);
                hp[i] = softplus(zp[i]);
                d1p[i] = s;
                if (d2p) d2p[i] = s * (1.0 - s);
            }
            break;
    }
}

}  // namespace detail

/// Fully connected network with a linear output layer. Parameters live in one
/// flat vector: for each layer, the weight matrix (column-major) then the bias.
class Mlp {
public:
    Mlp() = default;
    Mlp(std::vector<int> widths, Activation act) : widths_(std::move(widths)), act_(act) {
        if (widths_.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw ConfigError("Mlp widths must be positive");
            offsets_.push_back(n);
            n += static_cast<std::size_t>(widths_[l + 1]) * (widths_[l] + 1);
        }
        theta_ = Vec::Zero(static_cast<Eigen::Index>(n));
    }

    /// Uniform fan-in initialization; the output layer is scaled by `out_scale`.
    void init(RngStream& rng, double out_scale = 1.0) {
        for (std::size_t l = 0; l < n_layers(); ++l) {
            const double bound = std::sqrt(6.0 / widths_[l]) * (l + 1 == n_layers() ? out_scale : 1.0);
            auto w = weight(l);
            for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
            bias(l).setZero();
        }
    }

    std::size_t n_layers() const { return widths_.size() - 1; }
    int in_dim() const { return widths_.front(); }
    int out_dim() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    Activation activation() const { return act_; }
    Vec& params() { return theta_; }
    const Vec& params() const { return theta_; }

    Eigen::Map<Mat> weight(std::size_t l) {
        return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
    }
    Eigen::Map<const Mat> weight(std::size_t l) const {
        return {theta_.data() + offsets_[l], widths_[l + 1], widths_[l]};
    }
    Eigen::Map<Vec> bias(std::size_t l) {
        return {theta_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
    }
    Eigen::Map<const Vec> bias(std::size_t l) const {
        return {theta_.data() + offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
    }

    /// Outputs for each column of X.
    Mat forward(const Mat& X) const {
        check_input(X);
        Mat h = X, z, d1;
        for (std::size_t l = 0; l < n_layers(); ++l) {
            z = weight(l) * h;
            z.colwise() += bias(l);
            if (l + 1 == n_layers()) return z;
            detail::activate(act_, z, h, d1, nullptr);
        }
        return z;
    }

    Vec eval(const Vec& x) const { return forward(Mat(x)).col(0); }

    /// Gradient w.r.t. parameters of sum_b <U_b, f(X_b)>.
    Vec grad_params(const Mat& X, const Mat& U) const {
        Vec g;
        value_and_grad(X, U, Vec(), 0, nullptr, nullptr, &g);
        return g;
    }

    /// Per-column divergence sum_{i<n_div} d f_i / d x_i.
    Vec divergence(const Mat& X, int n_div) const {
        Mat out;
        Vec div;
        value_and_grad(X, Mat(), Vec(), n_div, &out, &div, nullptr);
        return div;
    }

    /// Forward values, divergences, and the parameter gradient of
    /// sum_b <U_b, f(X_b)> + c_b div f(X_b). Any output pointer may be null;
    /// U and c may be empty when no gradient is requested.
    void value_and_grad(const Mat& X, const Mat& U, const Vec& c, int n_div, Mat* out, Vec* div, Vec* grad) const {
        check_input(X);
        if (n_div > std::min(in_dim(), out_dim())) throw ConfigError("divergence slice exceeds network dims");
        const Eigen::Index B = X.cols();
        if (out) out->resize(out_dim(), B);
        if (div) div->resize(B);
        if (grad) grad->setZero(theta_.size());
        // Column blocks keep the per-layer temporaries cache-sized.
        constexpr Eigen::Index kBlock = 512;
        Mat o;
        Vec dv, g;
        for (Eigen::Index lo = 0; lo < B; lo += kBlock) {
            const Eigen::Index len = std::min(kBlock, B - lo);
            block_value_and_grad(X.middleCols(lo, len), U.size() > 0 ? Mat(U.middleCols(lo, len)) : Mat(),
                                 c.size() > 0 ? Vec(c.segment(lo, len)) : Vec(), n_div, out ? &o : nullptr,
                                 div ? &dv : nullptr, grad ? &g : nullptr);
            if (out) out->middleCols(lo, len) = o;
            if (div) div->segment(lo, len) = dv;
            if (grad) *grad += g;
        }
    }

private:
    void block_value_and_grad(const Mat& X, const Mat& U, const Vec& c, int n_div, Mat* out, Vec* div,
                              Vec* grad) const {
        const std::size_t L = n_layers();
        const Eigen::Index B = X.cols();
        const bool want_d2 = grad && c.size() > 0 && act_ != Activation::ReLU;

        std::vector<Mat> H(L), Z(L + 1), D1(L + 1), D2(L + 1);
        H[0] = X;
        for (std::size_t l = 0; l < L; ++l) {
            Z[l + 1] = weight(l) * H[l];
            Z[l + 1].colwise() += bias(l);
            if (l + 1 < L) {
                Mat h;
                detail::activate(act_, Z[l + 1], h, D1[l + 1], want_d2 ? &D2[l + 1] : nullptr);
                H[l + 1] = std::move(h);
            }
        }
        if (out) *out = Z[L];

        const bool need_div = n_div > 0 && (div || (grad && c.size() > 0));
        if (div) div->setZero(B);
        std::vector<Mat> extra(L + 1);
        if (grad) {
            grad->setZero(theta_.size());
            for (std::size_t l = 1; l < L; ++l) extra[l].setZero(widths_[l], B);
        }

        if (need_div) {
            std::vector<Mat> Hp(L), Zp(L + 1);
            for (int i = 0; i < n_div; ++i) {
                // Tangent pass along input direction e_i.
                Zp[1] = weight(0).col(i).replicate(1, B);
                for (std::size_t l = 1; l < L; ++l) {
                    Hp[l] = D1[l].cwiseProduct(Zp[l]);
                    Zp[l + 1] = weight(l) * Hp[l];
                }
                if (div) *div += Zp[L].row(i).transpose();
                if (!grad || c.size() == 0) continue;
                // Reverse through the tangent recursion.
                Mat gzp = Mat::Zero(out_dim(), B);
                gzp.row(i) = c.transpose();
                for (std::size_t l = L - 1; l >= 1; --l) {
                    wgrad(*grad, l) += gzp * Hp[l].transpose();
                    const Mat ghp = weight(l).transpose() * gzp;
                    if (want_d2) extra[l] += D2[l].cwiseProduct(Zp[l]).cwiseProduct(ghp);
                    gzp = D1[l].cwiseProduct(ghp);
                }
                wgrad(*grad, 0).col(i) += gzp.rowwise().sum();
            }
        }

        if (!grad) return;
        Mat gz = U.size() > 0 ? U : Mat::Zero(out_dim(), B);
        for (std::size_t l = L; l >= 1; --l) {
            wgrad(*grad, l - 1) += gz * H[l - 1].transpose();
            bgrad(*grad, l - 1) += gz.rowwise().sum();
            if (l == 1) break;
            const Mat gh = weight(l - 1).transpose() * gz;
            gz = D1[l - 1].cwiseProduct(gh) + extra[l - 1];
        }
    }

    void check_input(const Mat& X) const {
        if (X.rows() != in_dim()) throw ConfigError("Mlp input dimension mismatch");
    }
    Eigen::Map<Mat> wgrad(Vec& g, std::size_t l) const {
        return {g.data() + offsets_[l], widths_[l + 1], widths_[l]};
    }
    Eigen::Map<Vec> bgrad(Vec& g, std::size_t l) const {
        return {g.data() + offsets_[l] + static_cast<std::size_t>(widths_[l + 1]) * widths_[l], widths_[l + 1]};
    }

    std::vector<int> widths_;
    Activation act_ = Activation::ReLU;
    std::vector<std::size_t> offsets_;
    Vec theta_;
};

/// Scalar input-convex network
///   phi(x) = (alpha/2)|x|^2 + w_L^T h_L + a_L^T x + b_L,
///   h_1 = s(A_0 x + b_0),  h_{l+1} = s(W_l h_l + A_l x + b_l),
/// with s = softplus, and W_l, w_L, alpha obtained from raw parameters through
/// softplus, so they are nonnegative and phi is convex in x.
class Icnn {
public:
    Icnn() = default;
    Icnn(int dim, std::vector<int> hidden) : d_(dim), hidden_(std::move(hidden)) {
        if (dim <= 0 || hidden_.empty()) throw ConfigError("Icnn needs a positive dimension and hidden layers");
        std::size_t n = 0;
        auto take = [&n](std::size_t k) {
            const std::size_t o = n;
            n += k;
            return o;
        };
        for (std::size_t l = 0; l < hidden_.size(); ++l) {
            const auto k = static_cast<std::size_t>(hidden_[l]);
            A_off_.push_back(take(k * d_));
            b_off_.push_back(take(k));
            W_off_.push_back(l == 0 ? 0 : take(k * hidden_[l - 1]));
        }
        wL_off_ = take(hidden_.back());
        aL_off_ = take(d_);
        bL_off_ = take(1);
        alpha_off_ = take(1);
        theta_ = Vec::Zero(static_cast<Eigen::Index>(n));
    }

    /// Near-identity start: grad phi(x) = x + O(small).
    void init(RngStream& rng, double scale = 0.1, double raw_positive = -4.0) {
        theta_.setZero();
        for (std::size_t l = 0; l < hidden_.size(); ++l) {
            auto A = mat(A_off_[l], hidden_[l], d_);
            for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
            auto b = vec(b_off_[l], hidden_[l]);
            for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = scale * (2.0 * rng.uniform() - 1.0);
            if (l > 0) {
                auto W = mat(W_off_[l], hidden_[l], hidden_[l - 1]);
                for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = raw_positive + scale * (2.0 * rng.uniform() - 1.0);
            }
        }
        vec(wL_off_, hidden_.back()).setConstant(raw_positive);
        theta_(static_cast<Eigen::Index>(alpha_off_)) = std::log(std::exp(1.0) - 1.0);
    }

    int dim() const { return d_; }
    const std::vector<int>& hidden() const { return hidden_; }
    Vec& params() { return theta_; }
    const Vec& params() const { return theta_; }

    double alpha() const { return detail::softplus(theta_(static_cast<Eigen::Index>(alpha_off_))); }

    /// Nonnegative propagation weights of layer l >= 1.
    Mat propagation_weight(std::size_t l) const { return cmat(W_off_[l], hidden_[l], hidden_[l - 1]).unaryExpr(&detail::softplus); }

    /// phi at each column of X.
    Vec value(const Mat& X) const {
        Fwd f = forward(X);
        Vec out = (output_weight().transpose() * f.H.back()).transpose();
        out.array() += cvec(bL_off_, 1)(0);
        out += (cvec(aL_off_, d_).transpose() * X).transpose();
        out += 0.5 * alpha() * X.colwise().squaredNorm().transpose();
        return out;
    }

    /// ∇_x phi at each column of X (the transport map).
    Mat grad_x(const Mat& X) const {
        Fwd f = forward(X);
        const std::size_t L = hidden_.size();
        Mat out = alpha() * X;
        out.colwise() += cvec(aL_off_, d_);
        Mat gh = output_weight().replicate(1, X.cols());
        for (std::size_t l = L; l-- > 0;) {
            const Mat gz = f.D1[l].cwiseProduct(gh);
            out += cmat(A_off_[l], hidden_[l], d_).transpose() * gz;
            if (l == 0) break;
            gh = propagation_weight(l).transpose() * gz;
        }
        return out;
    }

    /// Gradient w.r.t. raw parameters of sum_b <G_b, ∇_x phi(X_b)>.
    Vec grad_params_of_map(const Mat& X, const Mat& G) const {
        Fwd f = forward(X, true);
        const std::size_t L = hidden_.size();
        const Eigen::Index B = X.cols();
        Vec g = Vec::Zero(theta_.size());

        // Tangent pass along G.
        std::vector<Mat> Zp(L), Hp(L);
        for (std::size_t l = 0; l < L; ++l) {
            Zp[l] = cmat(A_off_[l], hidden_[l], d_) * G;
            if (l > 0) Zp[l] += propagation_weight(l) * Hp[l - 1];
            Hp[l] = f.D1[l].cwiseProduct(Zp[l]);
        }
        // out' = w^T Hp_L + a^T G + alpha <x, G>.
        const Vec wL = output_weight();
        vec_of(g, wL_off_, hidden_.back()) += Hp.back().rowwise().sum();
        vec_of(g, aL_off_, d_) += G.rowwise().sum();
        const double galpha = X.cwiseProduct(G).sum();

        std::vector<Mat> extra(L);
        Mat ghp = wL.replicate(1, B);
        std::vector<Mat> gW(L);
        for (std::size_t l = L; l-- > 0;) {
            extra[l] = f.D2[l].cwiseProduct(Zp[l]).cwiseProduct(ghp);
            const Mat gzp = f.D1[l].cwiseProduct(ghp);
            mat_of(g, A_off_[l], hidden_[l], d_) += gzp * G.transpose();
            if (l == 0) break;
            gW[l] = gzp * Hp[l - 1].transpose();
            ghp = propagation_weight(l).transpose() * gzp;
        }
        // Primal adjoints driven by the sigma'' terms.
        Mat gh = Mat::Zero(hidden_.back(), B);
        for (std::size_t l = L; l-- > 0;) {
            const Mat gz = f.D1[l].cwiseProduct(gh) + extra[l];
            mat_of(g, A_off_[l], hidden_[l], d_) += gz * X.transpose();
            vec_of(g, b_off_[l], hidden_[l]) += gz.rowwise().sum();
            if (l == 0) break;
            gW[l] += gz * f.H[l - 1].transpose();
            gh = propagation_weight(l).transpose() * gz;
        }
        // Chain through the softplus reparameterizations.
        for (std::size_t l = 1; l < L; ++l)
            mat_of(g, W_off_[l], hidden_[l], hidden_[l - 1]) =
                gW[l].cwiseProduct(cmat(W_off_[l], hidden_[l], hidden_[l - 1]).unaryExpr(&detail::sigmoid));
        vec_of(g, wL_off_, hidden_.back()) =
            vec_of(g, wL_off_, hidden_.back()).cwiseProduct(cvec(wL_off_, hidden_.back()).unaryExpr(&detail::sigmoid));
        g(static_cast<Eigen::Index>(alpha_off_)) = galpha * detail::sigmoid(theta_(static_cast<Eigen::Index>(alpha_off_)));
        return g;
    }

private:
    struct Fwd {
        std::vector<Mat> H, D1, D2;
    };

    Vec output_weight() const { return cvec(wL_off_, hidden_.back()).unaryExpr(&detail::softplus); }

    Fwd forward(const Mat& X, bool second = false) const {
        if (X.rows() != d_) throw ConfigError("Icnn input dimension mismatch");
        const std::size_t L = hidden_.size();
        Fwd f;
        f.H.resize(L);
        f.D1.resize(L);
        f.D2.resize(L);
        for (std::size_t l = 0; l < L; ++l) {
            Mat z = cmat(A_off_[l], hidden_[l], d_) * X;
            z.colwise() += cvec(b_off_[l], hidden_[l]);
            if (l > 0) z += propagation_weight(l) * f.H[l - 1];
            detail::activate(Activation::Softplus, z, f.H[l], f.D1[l], second ? &f.D2[l] : nullptr);
        }
        return f;
    }

    Eigen::Map<Mat> mat(std::size_t off, Eigen::Index r, Eigen::Index c) { return {theta_.data() + off, r, c}; }
    Eigen::Map<Vec> vec(std::size_t off, Eigen::Index n) { return {theta_.data() + off, n}; }
    Eigen::Map<const Mat> cmat(std::size_t off, Eigen::Index r, Eigen::Index c) const {
        return {theta_.data() + off, r, c};
    }
    Eigen::Map<const Vec> cvec(std::size_t off, Eigen::Index n) const { return {theta_.data() + off, n}; }
    static Eigen::Map<Mat> mat_of(Vec& g, std::size_t off, Eigen::Index r, Eigen::Index c) {
        return {g.data() + off, r, c};
    }
    static Eigen::Map<Vec> vec_of(Vec& g, std::size_t off, Eigen::Index n) { return {g.data() + off, n}; }

    int d_ = 1;
    std::vector<int> hidden_;
    std::vector<std::size_t> A_off_, b_off_, W_off_;
    std::size_t wL_off_ = 0, aL_off_ = 0, bL_off_ = 0, alpha_off_ = 0;
    Vec theta_;
};

/// Bias-corrected Adam on a flat parameter vector.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(Vec& params, const Vec& grad) {
        if (m_.size() != params.size()) {
            m_ = Vec::Zero(params.size());
            v_ = Vec::Zero(params.size());
            t_ = 0;
        }
        if (grad.size() != params.size()) throw ConfigError("Adam: gradient shape mismatch");
        ++t_;
        m_ = b1_ * m_ + (1.0 - b1_) * grad;
        v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
    }

    long steps() const { return t_; }
    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    Vec m_, v_;
    long t_ = 0;
};

}  // namespace pathsamp
