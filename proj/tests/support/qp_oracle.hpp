#pragma once

#include <cmath>

#include "pathsamp/eulerian.hpp"
#include "pathsamp/rng.hpp"

namespace pathsamp::testing {

// Log-barrier Newton on the 1D composite problem in (phi, beta):
// min Phi(phi) s.t. c_i - (a_i + ½ beta_i²) > 0, a = -D^T beta - phi/h.
Vec barrier_qp(const CpProblem& p) {
    const SpatialGrid& g = *p.grid;
    const Eigen::Index N = g.size();
    const Mat D = Mat(grid_grad_matrix(g));  // N x N in 1D
    Mat Wd = p.W.row(0).transpose().asDiagonal();
    auto slack = [&](const Vec& z) {
        const Vec phi = z.head(N), beta = z.tail(N);
        const Vec a = -D.transpose() * beta - phi / p.h;
        return Vec(p.c - a - 0.5 * beta.cwiseAbs2());
    };
    auto obj = [&](const Vec& z) {
        const Vec r = D * z.head(N) + p.g.row(0).transpose();
        return 0.5 * r.dot(Wd * r) + z.head(N).dot(p.q0);
    };
    Vec z = Vec::Zero(2 * N);
    z.head(N).setConstant(p.h * (1.0 + p.c.cwiseAbs().maxCoeff()) + 1.0);
    for (double t = 1.0; t < 1e13; t *= 4.0) {
        for (int it = 0; it < 200; ++it) {
            const Vec s = slack(z);
            Vec grad = Vec::Zero(2 * N);
            Mat H = Mat::Zero(2 * N, 2 * N);
            const Vec r = D * z.head(N) + p.g.row(0).transpose();
            grad.head(N) = t * (D.transpose() * (Wd * r) + p.q0);
            H.topLeftCorner(N, N) = t * D.transpose() * Wd * D;
            for (Eigen::Index i = 0; i < N; ++i) {
                // ∇s_i: phi part +e_i/h, beta part D_{:,i}^T... i.e. row i of D^T, minus beta_i e_i
                Vec gs = Vec::Zero(2 * N);
                gs(i) = 1.0 / p.h;
                gs.tail(N) = D.transpose().row(i).transpose();
                gs(N + i) -= z(N + i);
                grad -= gs / s(i);
                H += gs * gs.transpose() / (s(i) * s(i));
                H(N + i, N + i) += 1.0 / s(i);
            }
            const Vec step = -H.ldlt().solve(grad);
            if (-grad.dot(step) < 1e-14) break;
            double alpha = 1.0;
            auto phi_t = [&](const Vec& y) { return t * obj(y) - slack(y).array().log().sum(); };
            const double f0 = phi_t(z);
            while (alpha > 1e-12) {
                const Vec zn = z + alpha * step;
                if ((slack(zn).array() > 0.0).all() && phi_t(zn) <= f0 + 1e-4 * alpha * grad.dot(step)) break;
                alpha *= 0.5;
            }
            z += alpha * step;
        }
    }
    return z.head(N);
}

CpProblem toy_problem(const SpatialGrid& g, std::uint64_t seed) {
    RngStream rng(seed, 0);
    CpProblem p;
    p.grid = &g;
    p.h = 0.1;
    const Eigen::Index N = g.size();
    p.q0 = Vec(N);
    for (Eigen::Index i = 0; i < N; ++i) p.q0(i) = 0.5 + rng.uniform();
    p.W = Mat::Zero(1, N);
    p.g = Mat::Zero(1, N);
    for (Eigen::Index i = 0; i + 1 < N; ++i) {
        p.W(0, i) = p.h * 0.5 * (p.q0(i) + p.q0(i + 1));
        p.g(0, i) = rng.normal();
    }
    p.c = Vec(N);
    for (Eigen::Index i = 0; i < N; ++i) p.c(i) = rng.normal();
    return p;
}

}  // namespace pathsamp::testing
