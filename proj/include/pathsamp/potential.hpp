#pragma once

#include <cmath>
#include <memory>

#include "pathsamp/paths.hpp"

namespace pathsamp {

/// Smooth potential V with the derivatives the samplers need.
class Potential {
public:
    virtual ~Potential() = default;
    virtual double value(const Vec& x) const = 0;
    virtual Vec grad(const Vec& x) const = 0;
    virtual double laplacian(const Vec& x) const = 0;
    virtual Mat hessian(const Vec& x) const = 0;
    /// Gradient of the Laplacian, ∇(ΔV).
    virtual Vec grad_laplacian(const Vec& x) const = 0;
};

using PotentialPtr = std::shared_ptr<const Potential>;

/// V(x) = 0.
class FlatPotential final : public Potential {
public:
    double value(const Vec&) const override { return 0.0; }
    Vec grad(const Vec& x) const override { return Vec::Zero(x.size()); }
    double laplacian(const Vec&) const override { return 0.0; }
    Mat hessian(const Vec& x) const override { return Mat::Zero(x.size(), x.size()); }
    Vec grad_laplacian(const Vec& x) const override { return Vec::Zero(x.size()); }
};

/// V(x) = (k/2)|x - c|^2; with c = 0 its gradient flow is the OU process.
class QuadraticPotential final : public Potential {
public:
    explicit QuadraticPotential(double stiffness, Vec center = Vec())
        : k_(stiffness), c_(std::move(center)) {}

    double value(const Vec& x) const override { return 0.5 * k_ * shifted(x).squaredNorm(); }
    Vec grad(const Vec& x) const override { return k_ * shifted(x); }
    double laplacian(const Vec& x) const override { return k_ * static_cast<double>(x.size()); }
    Mat hessian(const Vec& x) const override { return k_ * Mat::Identity(x.size(), x.size()); }
    Vec grad_laplacian(const Vec& x) const override { return Vec::Zero(x.size()); }

    double stiffness() const { return k_; }

private:
    Vec shifted(const Vec& x) const { return c_.size() == 0 ? x : Vec(x - c_); }

    double k_;
    Vec c_;
};

/// V(x) = a (x_0^2 - 1)^2 + (k/2) sum_{i>0} x_i^2. In 1D this is the
/// symmetric double well with minima at +-1.
class DoubleWellPotential final : public Potential {
public:
    explicit DoubleWellPotential(double height = 5.0, double transverse = 0.0)
        : a_(height), k_(transverse) {}

    double value(const Vec& x) const override {
        const double w = x(0) * x(0) - 1.0;
        return a_ * w * w + 0.5 * k_ * x.tail(x.size() - 1).squaredNorm();
    }
    Vec grad(const Vec& x) const override {
        Vec g = k_ * x;
        g(0) = 4.0 * a_ * x(0) * (x(0) * x(0) - 1.0);
        return g;
    }
    double laplacian(const Vec& x) const override {
        return a_ * (12.0 * x(0) * x(0) - 4.0) + k_ * static_cast<double>(x.size() - 1);
    }
    Mat hessian(const Vec& x) const override {
        Mat h = k_ * Mat::Identity(x.size(), x.size());
        h(0, 0) = a_ * (12.0 * x(0) * x(0) - 4.0);
        return h;
    }
    Vec grad_laplacian(const Vec& x) const override {
        Vec g = Vec::Zero(x.size());
        g(0) = 24.0 * a_ * x(0);
        return g;
    }

private:
    double a_;
    double k_;
};

/// V(x) = a sum_i (x_i^2 - 1)^2: one double well per coordinate (2^d minima).
class SeparableDoubleWellPotential final : public Potential {
public:
    explicit SeparableDoubleWellPotential(double height = 5.0) : a_(height) {}

    double value(const Vec& x) const override { return a_ * (x.array().square() - 1.0).square().sum(); }
    Vec grad(const Vec& x) const override { return 4.0 * a_ * x.array() * (x.array().square() - 1.0); }
    double laplacian(const Vec& x) const override { return a_ * (12.0 * x.array().square() - 4.0).sum(); }
    Mat hessian(const Vec& x) const override {
        return (a_ * (12.0 * x.array().square() - 4.0)).matrix().asDiagonal();
    }
    Vec grad_laplacian(const Vec& x) const override { return 24.0 * a_ * x; }

private:
    double a_;
};

}  // namespace pathsamp
