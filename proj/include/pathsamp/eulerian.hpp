#pragma once

#include <Eigen/Sparse>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <utility>
#include <vector>

#include "pathsamp/errors.hpp"
#include "pathsamp/paths.hpp"

namespace pathsamp {

/// Regular grid in d <= 2 dimensions with spacing tau; axis 0 varies fastest.
class SpatialGrid {
public:
    SpatialGrid(Vec lo, std::vector<Eigen::Index> counts, double tau) : lo_(std::move(lo)), n_(std::move(counts)), tau_(tau) {
        if (!(tau > 0.0)) throw ConfigError("spatial grid: tau must be positive");
        if (lo_.size() < 1 || lo_.size() > 2 || static_cast<std::size_t>(lo_.size()) != n_.size())
            throw ConfigError("spatial grid: only d = 1 or 2 is supported");
        for (auto k : n_)
            if (k < 2) throw ConfigError("spatial grid: need at least two nodes per axis");
    }

    /// Covers [lo, hi] per axis (hi rounded to the grid).
    static SpatialGrid box(const Vec& lo, const Vec& hi, double tau) {
        std::vector<Eigen::Index> n;
        for (Eigen::Index a = 0; a < lo.size(); ++a) n.push_back(static_cast<Eigen::Index>(std::llround((hi(a) - lo(a)) / tau)) + 1);
        return SpatialGrid(lo, n, tau);
    }

    Eigen::Index dim() const { return lo_.size(); }
    double tau() const { return tau_; }
    double cell_volume() const { return std::pow(tau_, static_cast<double>(dim())); }
    Eigen::Index count(Eigen::Index axis) const { return n_[static_cast<std::size_t>(axis)]; }
    Eigen::Index size() const {
        Eigen::Index s = 1;
        for (auto k : n_) s *= k;
        return s;
    }
    Eigen::Index stride(Eigen::Index axis) const { return axis == 0 ? 1 : n_[0]; }
    Eigen::Index coord(Eigen::Index node, Eigen::Index axis) const { return axis == 0 ? node % n_[0] : node / n_[0]; }
    bool has_forward(Eigen::Index node, Eigen::Index axis) const { return coord(node, axis) + 1 < count(axis); }

    Vec point(Eigen::Index node) const {
        Vec x(dim());
        for (Eigen::Index a = 0; a < dim(); ++a) x(a) = lo_(a) + tau_ * static_cast<double>(coord(node, a));
        return x;
    }
    /// Midpoint of the forward edge along `axis`.
    Vec edge_point(Eigen::Index node, Eigen::Index axis) const {
        Vec x = point(node);
        x(axis) += 0.5 * tau_;
        return x;
    }

private:
    Vec lo_;
    std::vector<Eigen::Index> n_;
    double tau_;
};

/// Density values per node; mass = Σ q tau^d.
struct GridDensity {
    Vec q;
    double mass(const SpatialGrid& g) const { return q.sum() * g.cell_volume(); }
    void normalize(const SpatialGrid& g) {
        const double m = mass(g);
        if (!(m > 0.0)) throw NumericalError("grid density has no mass");
        q /= m;
    }
};

/// Forward differences with zero flux through the far boundary: (Dphi)_{a,i} = (phi_{i+e_a} - phi_i)/tau,
/// or 0 where i has no forward neighbour. The discrete divergence is -D^T.
inline Mat grid_grad(const SpatialGrid& g, const Vec& phi) {
    Mat out = Mat::Zero(g.dim(), g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i)
        for (Eigen::Index a = 0; a < g.dim(); ++a)
            if (g.has_forward(i, a)) out(a, i) = (phi(i + g.stride(a)) - phi(i)) / g.tau();
    return out;
}

/// D^T applied to an edge field B (d x N).
inline Vec grid_grad_adjoint(const SpatialGrid& g, const Mat& B) {
    Vec out = Vec::Zero(g.size());
    for (Eigen::Index i = 0; i < g.size(); ++i)
        for (Eigen::Index a = 0; a < g.dim(); ++a)
            if (g.has_forward(i, a)) {
                out(i) -= B(a, i) / g.tau();
                out(i + g.stride(a)) += B(a, i) / g.tau();
            }
    return out;
}

inline Vec grid_div(const SpatialGrid& g, const Mat& B) { return -grid_grad_adjoint(g, B); }

inline Eigen::SparseMatrix<double> grid_grad_matrix(const SpatialGrid& g) {
    std::vector<Eigen::Triplet<double>> t;
    const Eigen::Index N = g.size();
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index a = 0; a < g.dim(); ++a)
            if (g.has_forward(i, a)) {
                t.emplace_back(a * N + i, i + g.stride(a), 1.0 / g.tau());
                t.emplace_back(a * N + i, i, -1.0 / g.tau());
            }
    Eigen::SparseMatrix<double> D(g.dim() * N, N);
    D.setFromTriplets(t.begin(), t.end());
    return D;
}

/// Projection of (a, b) onto {a + ½|b|² <= c} in the metric (a² / wa + |b|² / wb);
/// wa = wb = 1 is the Euclidean projection. Infeasible points map to
/// (a - mu wa, b/(1 + mu wb)) with mu > 0 the root of a - mu wa + |b|²/(2(1 + mu wb)²) = c.
inline std::pair<double, Vec> project_K(double a, const Vec& b, double c, double wa = 1.0, double wb = 1.0) {
    const double bb = b.squaredNorm();
    if (a + 0.5 * bb <= c) return {a, b};
    auto f = [&](double mu) { return a - mu * wa + bb / (2.0 * (1.0 + mu * wb) * (1.0 + mu * wb)) - c; };
    double lo = 0.0, hi = std::max(1.0, (a - c + 0.5 * bb) / wa);
    while (f(hi) > 0.0) hi *= 2.0;
    double mu = std::clamp((a - c) / wa, lo, hi);
    bool ok = false;
    // Safeguarded Newton: keep a bracket and fall back to bisection steps.
    for (int it = 0; it < 100; ++it) {
        const double v = f(mu);
        if (std::abs(v) < 1e-14 * std::max(1.0, std::abs(c) + std::abs(a))) {
            ok = true;
            break;
        }
        (v > 0.0 ? lo : hi) = mu;
        const double dv = -wa - wb * bb / std::pow(1.0 + mu * wb, 3);
        double next = mu - v / dv;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - mu) < 1e-15 * std::max(1.0, mu)) {
            mu = next;
            ok = true;
            break;
        }
        mu = next;
    }
    if (!ok) {
        for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
            const double mid = 0.5 * (lo + hi);
            (f(mid) > 0.0 ? lo : hi) = mid;
        }
        mu = 0.5 * (lo + hi);
    }
    return {a - mu * wa, b / (1.0 + mu * wb)};
}

/// Data of one h-step: Phi(phi) = ½ Σ W (Dphi + g)² + Σ phi q0 (per-cell sums),
/// constraint (-D^T beta - phi/h, beta) in K_c node by node.
struct CpProblem {
    const SpatialGrid* grid = nullptr;
    double h = 0.01;
    Vec q0;  // N
    Mat W;   // d x N edge weights (h * edge density), zero on boundary edges
    Mat g;   // d x N edge values of u_ref - ∇log P_ref
    Vec c;   // N, f_h / h
};

struct CpState {
    Vec phi;
    Mat beta;
    Vec y1;
    Mat y2;
};

struct CpOptions {
    std::size_t max_iters = 50000;
    double tol = 1e-8;
    double step_scale = 0.99;
    /// Also stop when the recovered density q0 - div(W(Dphi + g)) changes by less than
    /// density_tol * max(q0) over `check_every` iterations (0 disables).
    double density_tol = 1e-6;
    std::size_t check_every = 50;
};

struct CpResult {
    CpState state;
    std::size_t iterations = 0;
    double residual = std::numeric_limits<double>::infinity();
    bool converged = false;
    bool density_converged = false;
    double op_norm = 0.0;
};

inline double cp_objective(const CpProblem& p, const Vec& phi) {
    const Mat r = grid_grad(*p.grid, phi) + p.g;
    return 0.5 * (p.W.array() * r.array().square()).sum() + phi.dot(p.q0);
}

/// Largest violation of the pointwise constraint.
inline double cp_infeasibility(const CpProblem& p, const CpState& s) {
    const Vec a = -grid_grad_adjoint(*p.grid, s.beta) - s.phi / p.h;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, a(i) + 0.5 * s.beta.col(i).squaredNorm() - p.c(i));
    return worst;
}

namespace detail {

inline std::pair<Vec, Mat> cp_Lambda(const CpProblem& p, const Vec& phi, const Mat& beta) {
    return {-grid_grad_adjoint(*p.grid, beta) - phi / p.h, beta};
}

inline std::pair<Vec, Mat> cp_Lambda_adj(const CpProblem& p, const Vec& y1, const Mat& y2) {
    return {-y1 / p.h, -grid_grad(*p.grid, y1) + y2};
}

inline double cp_op_norm(const CpProblem& p, int iters = 200) {
    const Eigen::Index N = p.grid->size(), d = p.grid->dim();
    Vec phi = Vec::LinSpaced(N, 1.0, 2.0);
    Mat beta = Mat::Constant(d, N, 0.5);
    double est = 0.0;
    for (int k = 0; k < iters; ++k) {
        const auto [a, b] = cp_Lambda(p, phi, beta);
        const auto [pa, pb] = cp_Lambda_adj(p, a, b);
        const double nrm = std::sqrt(pa.squaredNorm() + pb.squaredNorm());
        if (!(nrm > 0.0)) break;
        est = std::sqrt(nrm / std::sqrt(phi.squaredNorm() + beta.squaredNorm()));
        phi = pa / nrm;
        beta = pb / nrm;
    }
    return est * 1.01;
}

}  // namespace detail

/// Prox of delta*Phi in phi: (I + delta D^T W D) phi = phi0 - delta q0 - delta D^T(W g).
class PhiProx {
public:
    PhiProx(const CpProblem& p, double delta) : p_(&p), delta_(delta) {
        const Eigen::Index N = p.grid->size(), d = p.grid->dim();
        const auto D = grid_grad_matrix(*p.grid);
        Eigen::SparseMatrix<double> Wd(d * N, d * N);
        std::vector<Eigen::Triplet<double>> t;
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index i = 0; i < N; ++i)
                if (p.W(a, i) != 0.0) t.emplace_back(a * N + i, a * N + i, p.W(a, i));
        Wd.setFromTriplets(t.begin(), t.end());
        Eigen::SparseMatrix<double> I(N, N);
        I.setIdentity();
        A_ = I + delta * Eigen::SparseMatrix<double>(D.transpose() * Wd * D);
        solver_.compute(A_);
        if (solver_.info() != Eigen::Success) {
            std::ostringstream os;
            os << "prox_phi: factorization failed on a grid with " << N << " nodes, tau=" << p.grid->tau()
               << ", delta=" << delta;
            throw NumericalError(os.str());
        }
        rhs_const_ = -delta * (p.q0 + grid_grad_adjoint(*p.grid, p.W.cwiseProduct(p.g)));
    }

    Vec operator()(const Vec& phi0) const {
        const Vec rhs = phi0 + rhs_const_;
        Vec phi = solver_.solve(rhs);
        const double res = (A_ * phi - rhs).norm() / std::max(1.0, rhs.norm());
        if (!(res < 1e-10)) {
            std::ostringstream os;
            os << "prox_phi: linear solve residual " << res << " on a grid with " << p_->grid->size() << " nodes";
            throw NumericalError(os.str());
        }
        return phi;
    }

private:
    const CpProblem* p_;
    double delta_;
    Eigen::SparseMatrix<double> A_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
    Vec rhs_const_;
};

/// Diagonal step sizes for the preconditioned iteration: the inverse absolute
/// row sums (dual) and column sums (primal) of Lambda, times `scale`.
struct CpSteps {
    Vec sig1;
    Mat sig2;
    double tau_phi = 0.0;
    Vec tau_beta;  // per edge slot, flattened like beta
};

namespace detail {

inline CpSteps cp_steps(const CpProblem& p, double scale) {
    const SpatialGrid& g = *p.grid;
    const Eigen::Index N = g.size(), d = g.dim();
    CpSteps s;
    s.sig1 = Vec::Constant(N, 1.0 / p.h);
    s.sig2 = Mat::Constant(d, N, scale);
    s.tau_beta = Vec::Constant(d * N, 1.0);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index a = 0; a < d; ++a)
            if (g.has_forward(i, a)) {
                s.sig1(i) += 1.0 / g.tau();
                s.sig1(i + g.stride(a)) += 1.0 / g.tau();
                s.tau_beta(a + d * i) += 2.0 / g.tau();
            }
    s.sig1 = s.sig1.cwiseInverse() * scale;
    s.tau_beta = s.tau_beta.cwiseInverse() * scale;
    s.tau_phi = p.h * scale;
    return s;
}

}  // namespace detail

/// Chambolle-Pock iterations for min_z Phi(z) + Psi(Lambda z), with diagonal
/// preconditioning; Psi is the indicator of K_c at every node.
inline CpResult cp_iterate(const CpProblem& p, const CpOptions& opt = {}, const CpState* warm = nullptr) {
    if (!p.grid) throw ConfigError("cp_iterate: grid missing");
    if (!(opt.step_scale > 0.0 && opt.step_scale <= 1.0)) throw ConfigError("cp_iterate: step scale must be in (0, 1]");
    const Eigen::Index N = p.grid->size(), d = p.grid->dim();
    CpResult res;
    res.op_norm = detail::cp_op_norm(p);
    const CpSteps st = detail::cp_steps(p, opt.step_scale);
    const Eigen::Map<const Mat> tau_beta(st.tau_beta.data(), d, N);
    const PhiProx prox(p, st.tau_phi);
    CpState z = warm ? *warm : CpState{Vec::Zero(N), Mat::Zero(d, N), Vec::Zero(N), Mat::Zero(d, N)};
    Vec u_phi = z.phi;
    Mat u_beta = z.beta;
    const double scale = std::sqrt(static_cast<double>(N));
    const double qmax = std::max(p.q0.maxCoeff(), 1e-300);
    auto recovered = [&](const Vec& phi) { return Vec(p.q0 + grid_grad_adjoint(*p.grid, p.W.cwiseProduct(grid_grad(*p.grid, phi) + p.g))); };
    Vec q_prev = recovered(z.phi);
    for (std::size_t k = 0; k < opt.max_iters; ++k) {
        // y <- prox_{S Psi*}(y + S Lambda u) = v - S proj_K^S(S^{-1} v)
        const auto [la, lb] = detail::cp_Lambda(p, u_phi, u_beta);
        const Vec v1 = z.y1 + st.sig1.cwiseProduct(la);
        const Mat v2 = z.y2 + st.sig2.cwiseProduct(lb);
        Vec y1n(N);
        Mat y2n(d, N);
        for (Eigen::Index i = 0; i < N; ++i) {
            const double s1 = st.sig1(i), s2 = st.sig2(0, i);
            const auto [pa, pb] = project_K(v1(i) / s1, v2.col(i) / s2, p.c(i), 1.0 / s1, 1.0 / s2);
            y1n(i) = v1(i) - s1 * pa;
            y2n.col(i) = v2.col(i) - s2 * pb;
        }
        const auto [ta, tb] = detail::cp_Lambda_adj(p, y1n, y2n);
        const Vec phin = prox(z.phi - st.tau_phi * ta);
        const Mat betan = z.beta - tau_beta.cwiseProduct(tb);
        // Primal and dual residuals of the iteration.
        const Vec dphi = z.phi - phin;
        const Mat dbeta = z.beta - betan;
        const Vec dy1 = z.y1 - y1n;
        const Mat dy2 = z.y2 - y2n;
        const auto [ra, rb] = detail::cp_Lambda_adj(p, dy1, dy2);
        const auto [sa, sb] = detail::cp_Lambda(p, dphi, dbeta);
        const double rp = std::sqrt((dphi / st.tau_phi - ra).squaredNorm() + (dbeta.cwiseQuotient(tau_beta) - rb).squaredNorm());
        const double rd = std::sqrt((dy1.cwiseQuotient(st.sig1) - sa).squaredNorm() + (dy2.cwiseQuotient(st.sig2) - sb).squaredNorm());
        u_phi = 2.0 * phin - z.phi;
        u_beta = 2.0 * betan - z.beta;
        z = {phin, betan, y1n, y2n};
        res.iterations = k + 1;
        res.residual = std::max(rp, rd) / scale;
        if (!std::isfinite(res.residual)) throw NumericalError("cp_iterate: non-finite iterate");
        if (res.residual < opt.tol) {
            res.converged = true;
            break;
        }
        if (opt.density_tol > 0.0 && opt.check_every > 0 && (k + 1) % opt.check_every == 0) {
            Vec q_now = recovered(z.phi);
            const double change = (q_now - q_prev).cwiseAbs().maxCoeff() / qmax;
            q_prev = std::move(q_now);
            if (change < opt.density_tol) {
                res.density_converged = true;
                break;
            }
        }
    }
    res.state = std::move(z);
    return res;
}

/// Reference process and likelihood for the Eulerian step. ∇log P_t^ref and
/// Δlog P_t^ref are the score and Laplacian of the reference marginal.
struct EulerianScenario {
    std::function<Vec(const Vec&, double)> u_ref;
    std::function<Vec(const Vec&, double)> score_ref;
    std::function<double(const Vec&, double)> lap_log_ref;
    std::function<double(const Vec&, double)> J;  // likelihood at time t (0 away from observations)
};

/// Brownian motion dX = sqrt(2) dW from x = A: P_t = N(A, 2t I).
inline EulerianScenario brownian_scenario(const Vec& A) {
    EulerianScenario s;
    s.u_ref = [](const Vec& x, double) { return Vec::Zero(x.size()); };
    s.score_ref = [A](const Vec& x, double t) { return Vec(-(x - A) / (2.0 * t)); };
    s.lap_log_ref = [](const Vec& x, double t) { return -static_cast<double>(x.size()) / (2.0 * t); };
    s.J = [](const Vec&, double) { return 0.0; };
    return s;
}

struct AdvanceResult {
    GridDensity q;
    Mat v;  // d x N edge velocities ∇phi + g
    double mass_drift = 0.0;   // |mass - 1| before clipping
    double clipped_mass = 0.0; // mass removed by clipping negatives
    bool mass_warning = false;
    CpResult cp;
};

inline CpProblem build_cp_problem(const SpatialGrid& grid, const GridDensity& q0, const EulerianScenario& sc, double t,
                                  double h) {
    if (!(h > 0.0)) throw ConfigError("advance_density: h must be positive");
    if (q0.q.size() != grid.size()) throw ConfigError("advance_density: density does not match the grid");
    if ((q0.q.array() < 0.0).any()) throw ConfigError("advance_density: density must be nonnegative");
    const Eigen::Index N = grid.size(), d = grid.dim();
    CpProblem p;
    p.grid = &grid;
    p.h = h;
    p.q0 = q0.q;
    p.W = Mat::Zero(d, N);
    p.g = Mat::Zero(d, N);
    p.c = Vec(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index a = 0; a < d; ++a) {
            if (!grid.has_forward(i, a)) continue;
            const Vec xe = grid.edge_point(i, a);
            p.W(a, i) = h * 0.5 * (q0.q(i) + q0.q(i + grid.stride(a)));
            p.g(a, i) = (sc.u_ref(xe, t) - sc.score_ref(xe, t))(a);
        }
        const Vec x = grid.point(i);
        const Vec s = sc.score_ref(x, t + h);
        const double f = 2.0 * sc.J(x, t + h) + 0.5 * h * s.squaredNorm() + h * sc.lap_log_ref(x, t + h);
        p.c(i) = f / h;
    }
    return p;
}

/// One Eulerian h-step t -> t+h: solve the dual problem, then
/// q_{t+h} = q_t - div(h q_t (∇phi + g)). Negative values are clipped and the mass renormalized.
inline AdvanceResult advance_density(const SpatialGrid& grid, const GridDensity& q0, const EulerianScenario& sc, double t,
                                     double h, const CpOptions& opt = {}, const CpState* warm = nullptr) {
    const CpProblem p = build_cp_problem(grid, q0, sc, t, h);
    AdvanceResult out;
    out.cp = cp_iterate(p, opt, warm);
    out.v = grid_grad(grid, out.cp.state.phi) + p.g;
    const double m0 = q0.mass(grid);
    out.q.q = q0.q - grid_div(grid, p.W.cwiseProduct(out.v));
    out.mass_drift = std::abs(out.q.mass(grid) - m0);
    out.mass_warning = out.mass_drift > 1e-6;
    const Vec clipped = out.q.q.cwiseMax(0.0);
    out.clipped_mass = (clipped - out.q.q).sum() * grid.cell_volume();
    out.q.q = clipped;
    out.q.normalize(grid);
    return out;
}

struct DensityTrack {
    std::vector<double> times;
    std::vector<GridDensity> densities;
    std::vector<AdvanceResult> steps;
};

inline DensityTrack run_eulerian(const SpatialGrid& grid, const GridDensity& q0, const EulerianScenario& sc, double t0,
                                 double h, std::size_t steps, const CpOptions& opt = {}) {
    DensityTrack tr;
    tr.times.push_back(t0);
    tr.densities.push_back(q0);
    for (std::size_t k = 0; k < steps; ++k) {
        const double t = t0 + static_cast<double>(k) * h;
        const CpState* warm = k > 0 ? &tr.steps.back().cp.state : nullptr;
        AdvanceResult step = advance_density(grid, tr.densities.back(), sc, t, h, opt, warm);
        tr.steps.push_back(std::move(step));
        tr.times.push_back(t + h);
        tr.densities.push_back(tr.steps.back().q);
    }
    return tr;
}

/// Grid density of N(mean, var I), normalized on the grid.
inline GridDensity gaussian_grid_density(const SpatialGrid& grid, const Vec& mean, double var) {
    GridDensity q{Vec(grid.size())};
    for (Eigen::Index i = 0; i < grid.size(); ++i) q.q(i) = std::exp(-(grid.point(i) - mean).squaredNorm() / (2.0 * var));
    q.normalize(grid);
    return q;
}

inline double l1_distance(const SpatialGrid& grid, const GridDensity& a, const GridDensity& b) {
    return (a.q - b.q).cwiseAbs().sum() * grid.cell_volume();
}

}  // namespace pathsamp
