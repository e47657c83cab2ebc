#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polystyle/metrics.hpp"
#include "polystyle/types.hpp"
#include "polystyle/vecmath.hpp"

namespace polystyle {

/// [|a-b| , a*b] componentwise; symmetric in its arguments.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> pair_features(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b);

Vector pair_features(const Vector& a, const Vector& b);

/// Rows are samples.
Matrix pair_feature_matrix(const Matrix& latents_a, const Matrix& latents_b);

double gini(std::span<const std::size_t> counts);

struct ForestConfig {
    int n_trees = 100;
    std::optional<int> max_depth;
    int min_samples_leaf = 2;
    std::optional<int> features_per_split;  // floor(sqrt(feature_dim)) when unset
    bool bootstrap = true;
    std::uint64_t seed = 0;

    int resolved_features(int feature_dim) const;
    void validate(int feature_dim) const;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::array<std::size_t, 2> counts{};  // training labels reaching the node

    bool is_leaf() const { return feature < 0; }
    int vote() const { return counts[1] > counts[0] ? 1 : 0; }
};

/// Nodes in depth-first preorder; node 0 is the root. x[feature] <= threshold
/// goes left.
struct DecisionTree {
    std::uint64_t seed = 0;
    std::vector<TreeNode> nodes;

    int vote(const Eigen::Ref<const Vector>& x) const;
    int depth() const;
};

struct ForestModel {
    int feature_dim = 0;
    ForestConfig config;
    std::vector<DecisionTree> trees;
};

/// One tree on the rows `sample` of `features` (repeats allowed).
DecisionTree train_tree(const Matrix& features, std::span<const int> labels,
                        std::span<const std::size_t> sample, const ForestConfig& cfg,
                        std::uint64_t tree_seed);

ForestModel train_forest(const Matrix& features, std::span<const int> labels, const ForestConfig& cfg);

double predict_proba(const ForestModel& model, const Eigen::Ref<const Vector>& x);
int predict(const ForestModel& model, const Eigen::Ref<const Vector>& x);
std::vector<double> predict_proba_rows(const ForestModel& model, const Matrix& features);
std::vector<int> predict_rows(const ForestModel& model, const Matrix& features);

std::string forest_json(const ForestModel& model);
ForestModel parse_forest_json(const std::string& text);
void save_forest(const std::filesystem::path& path, const ForestModel& model);
ForestModel load_forest(const std::filesystem::path& path);

/// The eight validation / test rows: accuracy, precision, recall, F1.
std::string metrics_table_json(const ClassificationReport& val, const ClassificationReport& test);

// ---------------------------------------------------------------------------

template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> pair_features(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    detail::require_same_dim(a, b);
    const Eigen::Index d = a.size();
    Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> out(2 * d);
    out.head(d) = (a - b).cwiseAbs();
    out.tail(d) = a.cwiseProduct(b);
    return out;
}

}  // namespace polystyle
