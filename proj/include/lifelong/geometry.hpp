#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "lifelong/error.hpp"

namespace lifelong {

using Embedding = Eigen::VectorXf;

namespace geometry {

// Clamp applied to cosine values before arccos. arccos'(x) diverges at |x| = 1.
inline constexpr double kArccosClamp = 1e-7;

namespace detail {

template <typename DA, typename DB>
void check_pair(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    require(a.size() == b.size(), "embedding length mismatch");
    require(a.size() > 0, "empty embedding");
}

}  // namespace detail

template <typename D>
double norm(const Eigen::MatrixBase<D>& a) {
    return a.template cast<double>().norm();
}

// Raw cosine similarity aᵀb / (‖a‖‖b‖), computed in double. Not clamped.
template <typename DA, typename DB>
double cosine_similarity(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    detail::check_pair(a, b);
    const auto ad = a.template cast<double>();
    const auto bd = b.template cast<double>();
    const double na = ad.norm();
    const double nb = bd.norm();
    require(na > 0.0 && nb > 0.0, "zero-norm embedding in cosine similarity");
    require(std::isfinite(na) && std::isfinite(nb), "non-finite embedding");
    return ad.dot(bd) / (na * nb);
}

inline double clamp_cosine(double c) {
    return std::clamp(c, -1.0 + kArccosClamp, 1.0 - kArccosClamp);
}

// arccos of the clamped cosine similarity; in [0, pi].
template <typename DA, typename DB>
double angular_distance(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    return std::acos(clamp_cosine(cosine_similarity(a, b)));
}

// One minus the (unclamped) cosine similarity; the cosine-mode distance.
template <typename DA, typename DB>
double cosine_distance(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    return 1.0 - cosine_similarity(a, b);
}

// Margin alpha * d(h_k, h_j). For alpha < 1 the margin never exceeds the
// inter-reference distance, so g = h_k always satisfies the hinge.
template <typename DA, typename DB>
double adaptive_margin(const Eigen::MatrixBase<DA>& h_k, const Eigen::MatrixBase<DB>& h_j,
                       double alpha) {
    require_config(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1)");
    return alpha * angular_distance(h_k, h_j);
}

// Gradient of the clamped arccos distance with respect to `a`, with `b`
// held fixed. At clamped points the arccos derivative is taken at the
// clamped value.
template <typename DA, typename DB>
Eigen::VectorXd angular_distance_grad(const Eigen::MatrixBase<DA>& a,
                                      const Eigen::MatrixBase<DB>& b) {
    detail::check_pair(a, b);
    const Eigen::VectorXd ad = a.template cast<double>();
    const Eigen::VectorXd bd = b.template cast<double>();
    const double na = ad.norm();
    const double nb = bd.norm();
    require(na > 0.0 && nb > 0.0, "zero-norm embedding in angular distance");
    const double c = ad.dot(bd) / (na * nb);
    const double cc = clamp_cosine(c);
    const double dacos = -1.0 / std::sqrt(1.0 - cc * cc);
    const Eigen::VectorXd dc = bd / (na * nb) - c * ad / (na * na);
    return dacos * dc;
}

// Gradient of 1 - cos(a, b) with respect to `a`.
template <typename DA, typename DB>
Eigen::VectorXd cosine_distance_grad(const Eigen::MatrixBase<DA>& a,
                                     const Eigen::MatrixBase<DB>& b) {
    detail::check_pair(a, b);
    const Eigen::VectorXd ad = a.template cast<double>();
    const Eigen::VectorXd bd = b.template cast<double>();
    const double na = ad.norm();
    const double nb = bd.norm();
    require(na > 0.0 && nb > 0.0, "zero-norm embedding in cosine distance");
    const double c = ad.dot(bd) / (na * nb);
    return -(bd / (na * nb) - c * ad / (na * na));
}

}  // namespace geometry
}  // namespace lifelong
