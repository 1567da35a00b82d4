#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pathsamp/paths.hpp"
#include "pathsamp/potential.hpp"

namespace pathsamp {

/// Vector field b(x, t) with its divergence. `node` is the grid index of t;
/// fields defined only on grid nodes (kernel solutions) use it, others ignore it.
class Drift {
public:
    virtual ~Drift() = default;
    virtual Vec eval(const Vec& x, double t, std::size_t node) const = 0;
    virtual double divergence(const Vec& x, double t, std::size_t node) const = 0;

    /// Columnwise evaluation over a d x K batch.
    virtual void eval_batch(const Mat& X, double t, std::size_t node, Mat& out) const {
        out.resize(X.rows(), X.cols());
        for (Eigen::Index k = 0; k < X.cols(); ++k) out.col(k) = eval(X.col(k), t, node);
    }
    virtual void divergence_batch(const Mat& X, double t, std::size_t node, Vec& out) const {
        out.resize(X.cols());
        for (Eigen::Index k = 0; k < X.cols(); ++k) out(k) = divergence(X.col(k), t, node);
    }
};

using DriftPtr = std::shared_ptr<const Drift>;

class ZeroDrift final : public Drift {
public:
    Vec eval(const Vec& x, double, std::size_t) const override { return Vec::Zero(x.size()); }
    double divergence(const Vec&, double, std::size_t) const override { return 0.0; }
    void eval_batch(const Mat& X, double, std::size_t, Mat& out) const override {
        out.setZero(X.rows(), X.cols());
    }
    void divergence_batch(const Mat& X, double, std::size_t, Vec& out) const override { out.setZero(X.cols()); }
};

/// b = -∇V.
class GradientDrift final : public Drift {
public:
    explicit GradientDrift(PotentialPtr v) : v_(std::move(v)) {}
    Vec eval(const Vec& x, double, std::size_t) const override { return -v_->grad(x); }
    double divergence(const Vec& x, double, std::size_t) const override { return -v_->laplacian(x); }
    const Potential& potential() const { return *v_; }
    const PotentialPtr& potential_ptr() const { return v_; }

private:
    PotentialPtr v_;
};

/// b = -beta x.
class OUDrift final : public Drift {
public:
    explicit OUDrift(double beta) : beta_(beta) {}
    Vec eval(const Vec& x, double, std::size_t) const override { return -beta_ * x; }
    double divergence(const Vec& x, double, std::size_t) const override {
        return -beta_ * static_cast<double>(x.size());
    }
    void eval_batch(const Mat& X, double, std::size_t, Mat& out) const override { out = -beta_ * X; }
    void divergence_batch(const Mat& X, double, std::size_t, Vec& out) const override {
        out.setConstant(X.cols(), -beta_ * static_cast<double>(X.rows()));
    }
    double beta() const { return beta_; }

private:
    double beta_;
};

/// b = (B - x)/(T - t); undefined at t = T.
class BridgeDrift final : public Drift {
public:
    BridgeDrift(Vec target, double horizon) : b_(std::move(target)), horizon_(horizon) {}
    Vec eval(const Vec& x, double t, std::size_t) const override { return (b_ - x) / remaining(t); }
    double divergence(const Vec& x, double t, std::size_t) const override {
        return -static_cast<double>(x.size()) / remaining(t);
    }
    void eval_batch(const Mat& X, double t, std::size_t, Mat& out) const override {
        out = ((-X).colwise() + b_) / remaining(t);
    }

private:
    double remaining(double t) const {
        const double r = horizon_ - t;
        if (!(r > 0.0)) throw NumericalError("bridge drift evaluated at the terminal time");
        return r;
    }

    Vec b_;
    double horizon_;
};

/// base + sum_k w_k phi_k.
class StackedDrift final : public Drift {
public:
    struct Increment {
        DriftPtr field;
        double weight;
    };

    explicit StackedDrift(DriftPtr base, std::vector<Increment> increments = {})
        : base_(std::move(base)), inc_(std::move(increments)) {}

    StackedDrift with(DriftPtr field, double weight) const {
        auto inc = inc_;
        inc.push_back({std::move(field), weight});
        return StackedDrift(base_, std::move(inc));
    }

    Vec eval(const Vec& x, double t, std::size_t node) const override {
        Vec out = base_->eval(x, t, node);
        for (const auto& i : inc_) out += i.weight * i.field->eval(x, t, node);
        return out;
    }
    double divergence(const Vec& x, double t, std::size_t node) const override {
        double out = base_->divergence(x, t, node);
        for (const auto& i : inc_) out += i.weight * i.field->divergence(x, t, node);
        return out;
    }
    void eval_batch(const Mat& X, double t, std::size_t node, Mat& out) const override {
        base_->eval_batch(X, t, node, out);
        Mat tmp;
        for (const auto& i : inc_) {
            i.field->eval_batch(X, t, node, tmp);
            out += i.weight * tmp;
        }
    }
    void divergence_batch(const Mat& X, double t, std::size_t node, Vec& out) const override {
        base_->divergence_batch(X, t, node, out);
        Vec tmp;
        for (const auto& i : inc_) {
            i.field->divergence_batch(X, t, node, tmp);
            out += i.weight * tmp;
        }
    }

    const DriftPtr& base() const { return base_; }
    const std::vector<Increment>& increments() const { return inc_; }

private:
    DriftPtr base_;
    std::vector<Increment> inc_;
};

}  // namespace pathsamp
