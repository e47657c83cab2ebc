#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "polystyle/error.hpp"
#include "polystyle/types.hpp"

namespace polystyle {

namespace detail {

template <typename DA, typename DB>
void require_same_dim(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
    if (a.size() != b.size()) {
        throw Error(Errc::DimensionMismatch,
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
}

}  // namespace detail

/// True when every entry is finite and the vector is non-empty.
template <typename Derived>
bool is_valid_vector(const Eigen::MatrixBase<Derived>& v) {
    return v.size() > 0 && v.allFinite();
}

/// dot(a,b) / (|a| |b|), clamped to [-1, 1].
template <typename DA, typename DB>
typename DA::Scalar cosine_similarity(const Eigen::MatrixBase<DA>& a,
                                      const Eigen::MatrixBase<DB>& b) {
    using Scalar = typename DA::Scalar;
    detail::require_same_dim(a, b);
    const Scalar na = a.norm();
    const Scalar nb = b.norm();
    if (!(na > Scalar(0)) || !(nb > Scalar(0))) {
        throw Error(Errc::ZeroNormVector, "cosine similarity of a zero vector");
    }
    const Scalar c = a.dot(b) / (na * nb);
    return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename DA, typename DB>
typename DA::Scalar cosine_distance(const Eigen::MatrixBase<DA>& a,
                                    const Eigen::MatrixBase<DB>& b) {
    return typename DA::Scalar(1) - cosine_similarity(a, b);
}

template <typename DA, typename DB>
typename DA::Scalar euclidean_distance(const Eigen::MatrixBase<DA>& a,
                                       const Eigen::MatrixBase<DB>& b) {
    detail::require_same_dim(a, b);
    return (a - b).norm();
}

template <typename Derived>
typename Types<typename Derived::Scalar>::Vector normalize(const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    const Scalar n = v.norm();
    if (!(n > Scalar(0))) {
        throw Error(Errc::ZeroNormVector, "cannot normalize a zero vector");
    }
    return v / n;
}

/// Componentwise mean, summed in the order given.
template <typename Scalar>
typename Types<Scalar>::Vector mean_pool(
    std::span<const typename Types<Scalar>::Vector> vs) {
    if (vs.empty()) {
        throw Error(Errc::EmptyInput, "mean_pool of an empty set");
    }
    typename Types<Scalar>::Vector acc = vs.front();
    for (std::size_t i = 1; i < vs.size(); ++i) {
        detail::require_same_dim(acc, vs[i]);
        acc += vs[i];
    }
    return acc / static_cast<Scalar>(vs.size());
}

inline Vector mean_pool(std::span<const Vector> vs) { return mean_pool<double>(vs); }

/// Mean over `vs` summed in ascending order of `ids`, so any permutation of
/// the (id, vector) pairs produces a bit-identical result.
template <typename Scalar>
typename Types<Scalar>::Vector mean_pool_by_id(
    std::span<const std::string> ids, std::span<const typename Types<Scalar>::Vector> vs) {
    if (ids.size() != vs.size()) {
        throw Error(Errc::LengthMismatch, "ids and vectors differ in length");
    }
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t l, std::size_t r) { return ids[l] < ids[r]; });
    std::vector<typename Types<Scalar>::Vector> sorted;
    sorted.reserve(order.size());
    for (std::size_t i : order) sorted.push_back(vs[i]);
    return mean_pool<Scalar>(std::span<const typename Types<Scalar>::Vector>(sorted));
}

inline Vector mean_pool_by_id(std::span<const std::string> ids, std::span<const Vector> vs) {
    return mean_pool_by_id<double>(ids, vs);
}

struct Projection2D {
    Eigen::MatrixX2d points;  // one row per input vector
    std::array<double, 2> explained_variance{0.0, 0.0};
    Eigen::MatrixX2d components;  // dim x 2, orthonormal columns
    Vector mean;
};

struct PowerIterationOptions {
    double relative_tolerance = 1e-10;
    int max_iterations = 1000;
};

/// Mean-centres `vs` and projects onto the top two principal components of
/// the sample covariance, found by power iteration with deflation from an
/// all-ones start vector. Each component's largest-magnitude entry is positive.
Projection2D pca_project(std::span<const Vector> vs, const PowerIterationOptions& opts = {});

}  // namespace polystyle
