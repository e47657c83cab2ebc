#pragma once

// Test helpers and brute-force reference implementations.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "polystyle/cluster.hpp"
#include "polystyle/error.hpp"
#include "polystyle/forest.hpp"
#include "polystyle/siamese.hpp"

namespace testing {

using polystyle::Matrix;
using polystyle::Vector;

inline Vector random_vector(std::mt19937_64& gen, int dim, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = n(gen);
    return v;
}

inline Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v[i++] = x;
    return v;
}

/// Code of the polystyle::Error thrown by fn; fails the test if none is thrown.
template <class Fn>
polystyle::Errc code_of(Fn&& fn) {
    try {
        fn();
    } catch (const polystyle::Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return polystyle::Errc::EmptyInput;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("polystyle-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// ---------------------------------------------------------------------------
// Clustering: rescan every pair at every step.

struct RefClusterResult {
    std::map<std::string, int> assignment;
    std::vector<polystyle::MergeStep> merge_log;
};

inline RefClusterResult reference_agglomerate(const std::vector<polystyle::IdEmbedding>& items,
                                              const polystyle::ClusterConfig& cfg) {
    using namespace polystyle;
    std::map<std::string, const Vector*> by_id;
    for (const auto& it : items) by_id[it.id] = &it.embedding;
    std::vector<std::vector<std::string>> clusters;  // each sorted
    for (const auto& [id, v] : by_id) clusters.push_back({id});

    auto centroid = [&](const std::vector<std::string>& ids) {
        std::vector<const Vector*> vs;
        for (const auto& id : ids) vs.push_back(by_id.at(id));
        return cluster_centroid(vs, cfg);
    };
    auto admissible = [&](const std::vector<std::string>& ids) {
        const Vector c = centroid(ids);
        for (const auto& id : ids) {
            if (!(metric_distance(cfg.metric, c, *by_id.at(id)) <= cfg.max_radius)) return false;
        }
        return true;
    };

    RefClusterResult out;
    while (true) {
        bool found = false;
        std::size_t bi = 0, bj = 0;
        double best = 0.0;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = 0; j < clusters.size(); ++j) {
                if (i == j || clusters[i].front() > clusters[j].front()) continue;
                std::vector<std::string> merged = clusters[i];
                merged.insert(merged.end(), clusters[j].begin(), clusters[j].end());
                std::sort(merged.begin(), merged.end());
                if (!admissible(merged)) continue;
                const double d = metric_distance(cfg.metric, centroid(clusters[i]), centroid(clusters[j]));
                const bool better =
                    !found || d < best ||
                    (d == best && (clusters[i].front() < clusters[bi].front() ||
                                   (clusters[i].front() == clusters[bi].front() &&
                                    clusters[j].front() < clusters[bj].front())));
                if (better) {
                    found = true;
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (!found) break;
        out.merge_log.push_back({clusters[bi].front(), clusters[bj].front(), best});
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(clusters[bi].begin(), clusters[bi].end());
        clusters.erase(clusters.begin() + static_cast<long>(bj));
    }
    std::sort(clusters.begin(), clusters.end());
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        for (const auto& id : clusters[c]) out.assignment[id] = static_cast<int>(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decision tree: every feature, every threshold, exact impurity arithmetic.

struct RefNode {
    int feature = -1;
    double threshold = 0.0;
    std::array<std::size_t, 2> counts{};
};

// Weighted Gini of a split, n_L*g_L + n_R*g_R, as the fraction
// (n_L*n_R*n - (sL*n_R + sR*n_L)) / (n_L*n_R) with s = c0^2 + c1^2.
struct Fraction {
    long long num;
    long long den;
};

inline bool less(const Fraction& a, const Fraction& b) { return a.num * b.den < b.num * a.den; }

inline void reference_tree(const Matrix& x, const std::vector<int>& y, std::vector<std::size_t> idx, int depth,
                           const polystyle::ForestConfig& cfg, std::vector<RefNode>& out) {
    RefNode node;
    for (auto i : idx) ++node.counts[static_cast<std::size_t>(y[i])];
    const std::size_t pos = out.size();
    out.push_back(node);
    const auto n = static_cast<long long>(idx.size());
    const auto msl = static_cast<std::size_t>(cfg.min_samples_leaf);
    if (node.counts[0] == 0 || node.counts[1] == 0) return;
    if (cfg.max_depth && depth >= *cfg.max_depth) return;

    const long long c0 = static_cast<long long>(node.counts[0]), c1 = static_cast<long long>(node.counts[1]);
    Fraction best{n * n - (c0 * c0 + c1 * c1), n};  // parent n * gini
    int best_f = -1;
    double best_t = 0.0;
    for (int f = 0; f < x.cols(); ++f) {
        std::vector<double> values;
        for (auto i : idx) values.push_back(x(static_cast<Eigen::Index>(i), f));
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (std::size_t k = 0; k + 1 < values.size(); ++k) {
            double t = 0.5 * (values[k] + values[k + 1]);
            if (!(t < values[k + 1])) t = values[k];
            long long l[2] = {0, 0}, r[2] = {0, 0};
            for (auto i : idx) (x(static_cast<Eigen::Index>(i), f) <= t ? l : r)[y[i]]++;
            const long long nl = l[0] + l[1], nr = r[0] + r[1];
            if (static_cast<std::size_t>(nl) < msl || static_cast<std::size_t>(nr) < msl) continue;
            const long long sl = l[0] * l[0] + l[1] * l[1], sr = r[0] * r[0] + r[1] * r[1];
            const Fraction w{nl * nr * n - (sl * nr + sr * nl), nl * nr};
            if (less(w, best)) {
                best = w;
                best_f = f;
                best_t = t;
            }
        }
    }
    if (best_f < 0) return;
    out[pos].feature = best_f;
    out[pos].threshold = best_t;
    std::vector<std::size_t> left, right;
    for (auto i : idx) (x(static_cast<Eigen::Index>(i), best_f) <= best_t ? left : right).push_back(i);
    reference_tree(x, y, left, depth + 1, cfg, out);
    reference_tree(x, y, right, depth + 1, cfg, out);
}

// ---------------------------------------------------------------------------
// Finite differences on the pair loss.

inline double& parameter(polystyle::EncoderModel& m, bool bias, std::size_t layer, Eigen::Index i, Eigen::Index j) {
    return bias ? m.biases[layer][i] : m.weights[layer](i, j);
}

}  // namespace testing
