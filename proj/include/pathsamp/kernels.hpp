#pragma once

#include <algorithm>
#include <vector>

#include "pathsamp/paths.hpp"

namespace pathsamp {

/// Median pairwise distance of the columns of X; 1.0 when the points coincide.
inline double median_bandwidth(const Mat& X) {
    const Eigen::Index n = X.cols();
    std::vector<double> dist;
    dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) dist.push_back((X.col(i) - X.col(j)).norm());
    if (dist.empty()) return 1.0;
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    return *mid > 1e-12 ? *mid : 1.0;
}

namespace detail {

/// D_ij = |a_i - b_j|² for the columns of A and B.
inline Mat sq_dists(const Mat& A, const Mat& B) {
    Mat D = (-2.0 * A.transpose() * B).colwise() + A.colwise().squaredNorm().transpose();
    D.rowwise() += B.colwise().squaredNorm();
    return D.cwiseMax(0.0);
}

}  // namespace detail

/// (1/N) Σ_j K(y_j - z) g_j for each query column z, K(r) = exp(-|r|²/(2 ell²)).
inline Mat rbf_smooth(const Mat& Y, const Mat& G, double ell, const Mat& Z) {
    const Mat Kzy = (-detail::sq_dists(Z, Y) / (2.0 * ell * ell)).array().exp().matrix();
    return G * Kzy.transpose() / static_cast<double>(Y.cols());
}

}  // namespace pathsamp
