#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "polystyle/error.hpp"
#include "polystyle/vecmath.hpp"
#include "support.hpp"

using namespace polystyle;
using testing::random_vector;
using testing::vec;

TEST_CASE("cosine similarity examples") {
    const Vector v = vec({0.3, -1.2, 4.0});
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine_similarity(vec({1, 0}), vec({0, 1})) == 0.0);
    CHECK(cosine_similarity(vec({1, 0}), vec({1, 1})) == doctest::Approx(0.7071067812).epsilon(1e-10));
}

TEST_CASE("cosine similarity errors") {
    CHECK_THROWS_AS(cosine_similarity(vec({1, 0}), vec({1, 0, 0})), Error);
    try {
        cosine_similarity(vec({0, 0}), vec({1, 0}));
        FAIL("expected ZeroNormVector");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::ZeroNormVector);
    }
}

TEST_CASE("cosine similarity properties") {
    std::mt19937_64 gen(11);
    for (int t = 0; t < 200; ++t) {
        const Vector a = random_vector(gen, 7), b = random_vector(gen, 7);
        const double ab = cosine_similarity(a, b);
        CHECK(ab == cosine_similarity(b, a));
        CHECK(std::abs(ab) <= 1.0);
        const double c = std::exp(std::normal_distribution<double>(0, 2)(gen));
        CHECK(cosine_similarity(a, Vector(c * a)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("euclidean distance") {
    const Vector x = vec({1.5, -2});
    CHECK(euclidean_distance(x, x) == 0.0);
    CHECK(euclidean_distance(vec({0, 0}), vec({3, 4})) == 5.0);
    CHECK_THROWS_AS(euclidean_distance(vec({0}), vec({3, 4})), Error);

    std::mt19937_64 gen(5);
    const Vector a = random_vector(gen, 16), b = random_vector(gen, 16);
    double ss = 0.0;
    for (int i = 0; i < 16; ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    CHECK(std::abs(euclidean_distance(a, b) - std::sqrt(ss)) < 1e-12);

    for (int t = 0; t < 200; ++t) {
        const Vector p = random_vector(gen, 5), q = random_vector(gen, 5), r = random_vector(gen, 5);
        CHECK(euclidean_distance(p, r) <= euclidean_distance(p, q) + euclidean_distance(q, r) + 1e-9);
        CHECK(euclidean_distance(p, q) == euclidean_distance(q, p));
    }
}

TEST_CASE("normalize") {
    const Vector n = normalize(vec({3, 4}));
    CHECK(n[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(n[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(normalize(vec({0, 1, 0})) == vec({0, 1, 0}));
    CHECK_THROWS_AS(normalize(vec({0, 0})), Error);
    std::mt19937_64 gen(3);
    for (int t = 0; t < 100; ++t) CHECK(std::abs(normalize(random_vector(gen, 9, 10.0)).norm() - 1.0) < 1e-12);
}

TEST_CASE("mean pooling") {
    const Vector v = vec({1, 2, 3});
    CHECK(mean_pool(std::vector<Vector>{v}) == v);
    CHECK(mean_pool(std::vector<Vector>{vec({1, 0}), vec({0, 1})}) == vec({0.5, 0.5}));
    CHECK(mean_pool(std::vector<Vector>(5, v)) == v);
    CHECK_THROWS_AS(mean_pool(std::vector<Vector>{}), Error);
    CHECK_THROWS_AS(mean_pool(std::vector<Vector>{vec({1}), vec({1, 2})}), Error);
}

TEST_CASE("mean pooling by id is permutation invariant bit for bit") {
    std::mt19937_64 gen(17);
    std::vector<std::string> ids;
    std::vector<Vector> vs;
    for (int i = 0; i < 40; ++i) {
        ids.push_back("id" + std::to_string(i));
        vs.push_back(random_vector(gen, 6, 1e3));
    }
    const Vector reference = mean_pool_by_id(ids, vs);
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int t = 0; t < 20; ++t) {
        std::shuffle(order.begin(), order.end(), gen);
        std::vector<std::string> pi;
        std::vector<Vector> pv;
        for (auto k : order) {
            pi.push_back(ids[k]);
            pv.push_back(vs[k]);
        }
        CHECK(mean_pool_by_id(pi, pv) == reference);
    }
}

namespace {

Matrix pairwise(const Eigen::MatrixX2d& p) {
    Matrix d(p.rows(), p.rows());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.rows(); ++j) d(i, j) = (p.row(i) - p.row(j)).norm();
    }
    return d;
}

}  // namespace

TEST_CASE("pca matches a dense eigen decomposition") {
    std::mt19937_64 gen(23);
    for (int t = 0; t < 10; ++t) {
        std::vector<Vector> vs;
        for (int i = 0; i < 5; ++i) vs.push_back(random_vector(gen, 3));
        const Projection2D proj = pca_project(vs);

        Matrix x(5, 3);
        for (int i = 0; i < 5; ++i) x.row(i) = vs[static_cast<std::size_t>(i)].transpose();
        const Matrix centered = x.rowwise() - x.colwise().mean();
        const Matrix cov = centered.transpose() * centered / 4.0;
        Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
        Matrix top(3, 2);
        top.col(0) = es.eigenvectors().col(2);
        top.col(1) = es.eigenvectors().col(1);
        const Eigen::MatrixX2d oracle = centered * top;

        CHECK((pairwise(proj.points) - pairwise(oracle)).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(proj.explained_variance[0] == doctest::Approx(es.eigenvalues()[2]).epsilon(1e-8));
        CHECK(proj.explained_variance[1] == doctest::Approx(es.eigenvalues()[1]).epsilon(1e-8));
        CHECK(proj.explained_variance[0] >= proj.explained_variance[1]);
        CHECK(proj.explained_variance[0] + proj.explained_variance[1] <= cov.trace() + 1e-6);
        for (int c = 0; c < 2; ++c) {
            Eigen::Index arg;
            proj.components.col(c).cwiseAbs().maxCoeff(&arg);
            CHECK(proj.components(arg, c) > 0.0);
        }
    }
}

TEST_CASE("pca edge cases") {
    std::vector<Vector> collinear;
    for (int i = 0; i < 6; ++i) collinear.push_back(vec({1.0 * i, 2.0 * i, -1.0 * i}));
    CHECK(pca_project(collinear).explained_variance[1] <= 1e-9);

    std::mt19937_64 gen(2);
    std::vector<Vector> vs, shifted;
    const Vector offset = random_vector(gen, 4, 10.0);
    for (int i = 0; i < 7; ++i) {
        vs.push_back(random_vector(gen, 4));
        shifted.push_back(vs.back() + offset);
    }
    const auto a = pca_project(vs), b = pca_project(shifted);
    CHECK((a.points - b.points).cwiseAbs().maxCoeff() < 1e-9);

    auto code_of = [](auto fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return Errc::EmptyInput;
    };
    CHECK(code_of([] { pca_project(std::vector<Vector>{vec({1, 2}), vec({3, 4})}); }) == Errc::InsufficientData);
    CHECK(code_of([] { pca_project(std::vector<Vector>(3, vec({1, 2}))); }) == Errc::DegenerateCovariance);
}
