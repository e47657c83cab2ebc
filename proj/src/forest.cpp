#include "polystyle/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "polystyle/error.hpp"

namespace polystyle {

using json = nlohmann::json;

Vector pair_features(const Vector& a, const Vector& b) { return pair_features<Vector, Vector>(a, b); }

Matrix pair_feature_matrix(const Matrix& latents_a, const Matrix& latents_b) {
    if (latents_a.rows() != latents_b.rows() || latents_a.cols() != latents_b.cols()) {
        throw Error(Errc::DimensionMismatch, "latent matrices differ in shape");
    }
    const Eigen::Index d = latents_a.cols();
    Matrix out(latents_a.rows(), 2 * d);
    out.leftCols(d) = (latents_a - latents_b).cwiseAbs();
    out.rightCols(d) = latents_a.cwiseProduct(latents_b);
    return out;
}

double gini(std::span<const std::size_t> counts) {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    if (n == 0) throw Error(Errc::EmptyNode, "gini of an empty node");
    double sum_sq = 0.0;
    for (auto c : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(n);
        sum_sq += p * p;
    }
    return 1.0 - sum_sq;
}

int ForestConfig::resolved_features(int feature_dim) const {
    if (features_per_split) return *features_per_split;
    return std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(feature_dim)))));
}

void ForestConfig::validate(int feature_dim) const {
    if (n_trees < 1) throw Error(Errc::ConfigInvalid, "n_trees must be positive");
    if (max_depth && *max_depth < 1) throw Error(Errc::ConfigInvalid, "max_depth must be positive");
    if (min_samples_leaf < 1) throw Error(Errc::ConfigInvalid, "min_samples_leaf must be positive");
    const int k = resolved_features(feature_dim);
    if (k < 1 || k > feature_dim) {
        throw Error(Errc::ConfigInvalid, "features_per_split must lie in [1, feature_dim]");
    }
}

int DecisionTree::vote(const Eigen::Ref<const Vector>& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
        const TreeNode& n = nodes[static_cast<std::size_t>(i)];
        i = x[n.feature] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].vote();
}

int DecisionTree::depth() const {
    // Preorder layout: children always follow their parent.
    std::vector<int> d(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, d[i]);
        if (!nodes[i].is_leaf()) {
            d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
            d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
        }
    }
    return deepest;
}

namespace {

using i128 = __int128;

// Split quality as the exact fraction sum_k (c0_k^2 + c1_k^2) / n_k over the
// two children; larger is purer. Weighted Gini is n - quality.
struct Score {
    i128 num = 0;
    i128 den = 1;

    bool better_than(const Score& o) const { return num * o.den > o.num * den; }
};

i128 sq(std::size_t c) { return static_cast<i128>(c) * static_cast<i128>(c); }

Score split_score(std::size_t l0, std::size_t l1, std::size_t r0, std::size_t r1) {
    const i128 nl = static_cast<i128>(l0 + l1), nr = static_cast<i128>(r0 + r1);
    return {(sq(l0) + sq(l1)) * nr + (sq(r0) + sq(r1)) * nl, nl * nr};
}

class TreeBuilder {
public:
    TreeBuilder(const Matrix& x, std::span<const int> y, const ForestConfig& cfg, std::uint64_t seed)
        : x_(x), y_(y), cfg_(cfg), k_(cfg.resolved_features(static_cast<int>(x.cols()))), gen_(seed) {
        features_.resize(static_cast<std::size_t>(x.cols()));
    }

    int build(std::vector<std::size_t> sample, int depth, std::vector<TreeNode>& nodes) {
        const int id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        std::array<std::size_t, 2> counts{};
        for (auto i : sample) ++counts[y_[i] == 1 ? 1 : 0];
        nodes.back().counts = counts;

        const bool pure = counts[0] == 0 || counts[1] == 0;
        const bool depth_capped = cfg_.max_depth && depth >= *cfg_.max_depth;
        const auto min_leaf = static_cast<std::size_t>(cfg_.min_samples_leaf);
        if (pure || depth_capped || sample.size() < 2 * min_leaf) return id;

        std::iota(features_.begin(), features_.end(), 0);
        for (int j = 0; j < k_; ++j) {
            std::uniform_int_distribution<int> pick(j, static_cast<int>(features_.size()) - 1);
            std::swap(features_[static_cast<std::size_t>(j)], features_[static_cast<std::size_t>(pick(gen_))]);
        }
        std::vector<int> subset(features_.begin(), features_.begin() + k_);
        std::sort(subset.begin(), subset.end());

        const Score parent{sq(counts[0]) + sq(counts[1]), static_cast<i128>(sample.size())};
        Score best = parent;
        int best_feature = -1;
        double best_threshold = 0.0;
        std::vector<std::pair<double, int>> column(sample.size());
        for (int f : subset) {
            for (std::size_t i = 0; i < sample.size(); ++i) column[i] = {x_(sample[i], f), y_[sample[i]] == 1};
            std::sort(column.begin(), column.end());
            std::size_t l0 = 0, l1 = 0;
            for (std::size_t i = 0; i + 1 < column.size(); ++i) {
                ++(column[i].second ? l1 : l0);
                if (!(column[i].first < column[i + 1].first)) continue;
                if (i + 1 < min_leaf || column.size() - i - 1 < min_leaf) continue;
                const Score s = split_score(l0, l1, counts[0] - l0, counts[1] - l1);
                if (s.better_than(best)) {
                    best = s;
                    best_feature = f;
                    const double lo = column[i].first, hi = column[i + 1].first;
                    double mid = 0.5 * (lo + hi);
                    if (!(mid < hi)) mid = lo;
                    best_threshold = mid;
                }
            }
        }
        if (best_feature < 0) return id;

        std::vector<std::size_t> left, right;
        for (auto i : sample) (x_(i, best_feature) <= best_threshold ? left : right).push_back(i);
        sample.clear();
        sample.shrink_to_fit();
        nodes[static_cast<std::size_t>(id)].feature = best_feature;
        nodes[static_cast<std::size_t>(id)].threshold = best_threshold;
        const int l = build(std::move(left), depth + 1, nodes);
        const int r = build(std::move(right), depth + 1, nodes);
        nodes[static_cast<std::size_t>(id)].left = l;
        nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }

private:
    const Matrix& x_;
    std::span<const int> y_;
    const ForestConfig& cfg_;
    int k_;
    std::mt19937_64 gen_;
    std::vector<int> features_;
};

void check_training_input(const Matrix& features, std::span<const int> labels) {
    if (features.rows() == 0 || labels.empty()) throw Error(Errc::EmptyDataset, "no training samples");
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw Error(Errc::LengthMismatch, "feature rows and labels differ in length");
    }
    if (features.cols() == 0) throw Error(Errc::EmptyDataset, "feature dimension is zero");
    if (!features.allFinite()) throw Error(Errc::NonFiniteValue, "non-finite feature value");
    bool seen[2] = {false, false};
    for (int y : labels) {
        if (y != 0 && y != 1) throw Error(Errc::SchemaViolation, "labels must be 0 or 1");
        seen[y] = true;
    }
    if (!seen[0] || !seen[1]) throw Error(Errc::SingleClassInput, "training labels contain a single class");
}

}  // namespace

DecisionTree train_tree(const Matrix& features, std::span<const int> labels,
                        std::span<const std::size_t> sample, const ForestConfig& cfg,
                        std::uint64_t tree_seed) {
    check_training_input(features, labels);
    cfg.validate(static_cast<int>(features.cols()));
    if (sample.empty()) throw Error(Errc::EmptyDataset, "empty tree sample");
    DecisionTree tree;
    tree.seed = tree_seed;
    TreeBuilder builder(features, labels, cfg, derive_seed(tree_seed, "features"));
    builder.build(std::vector<std::size_t>(sample.begin(), sample.end()), 0, tree.nodes);
    return tree;
}

ForestModel train_forest(const Matrix& features, std::span<const int> labels, const ForestConfig& cfg) {
    check_training_input(features, labels);
    if (features.rows() < 2) throw Error(Errc::EmptyDataset, "need at least 2 samples");
    const int dim = static_cast<int>(features.cols());
    cfg.validate(dim);

    ForestModel model;
    model.feature_dim = dim;
    model.config = cfg;
    const auto n = static_cast<std::size_t>(features.rows());
    std::vector<std::size_t> sample(n);
    for (int t = 0; t < cfg.n_trees; ++t) {
        const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(t));
        if (cfg.bootstrap) {
            std::mt19937_64 gen(derive_seed(seed, "bootstrap"));
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (auto& s : sample) s = pick(gen);
        } else {
            std::iota(sample.begin(), sample.end(), std::size_t{0});
        }
        model.trees.push_back(train_tree(features, labels, sample, cfg, seed));
    }
    return model;
}

double predict_proba(const ForestModel& model, const Eigen::Ref<const Vector>& x) {
    if (model.trees.empty()) throw Error(Errc::UnfittedModel, "forest has no trees");
    if (x.size() != model.feature_dim) {
        throw Error(Errc::DimensionMismatch, "forest expects dim " + std::to_string(model.feature_dim) +
                                                 ", got " + std::to_string(x.size()));
    }
    std::size_t ones = 0;
    for (const auto& t : model.trees) ones += static_cast<std::size_t>(t.vote(x));
    return static_cast<double>(ones) / static_cast<double>(model.trees.size());
}

int predict(const ForestModel& model, const Eigen::Ref<const Vector>& x) {
    return predict_proba(model, x) > 0.5 ? 1 : 0;
}

std::vector<double> predict_proba_rows(const ForestModel& model, const Matrix& features) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(features.rows()));
    Vector row;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        row = features.row(i).transpose();
        out.push_back(predict_proba(model, row));
    }
    return out;
}

std::vector<int> predict_rows(const ForestModel& model, const Matrix& features) {
    std::vector<int> out;
    for (double p : predict_proba_rows(model, features)) out.push_back(p > 0.5 ? 1 : 0);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string forest_json(const ForestModel& model) {
    json cfg{{"n_trees", model.config.n_trees},
             {"min_samples_leaf", model.config.min_samples_leaf},
             {"features_per_split", model.config.resolved_features(model.feature_dim)},
             {"bootstrap", model.config.bootstrap},
             {"seed", model.config.seed}};
    cfg["max_depth"] = model.config.max_depth ? json(*model.config.max_depth) : json(nullptr);
    json trees = json::array();
    for (const auto& t : model.trees) {
        json nodes = json::array();
        for (const auto& n : t.nodes) {
            if (n.is_leaf()) {
                nodes.push_back({{"counts", {n.counts[0], n.counts[1]}}});
            } else {
                nodes.push_back({{"feat", n.feature}, {"thr", n.threshold}, {"left", n.left}, {"right", n.right}});
            }
        }
        trees.push_back({{"seed", t.seed}, {"nodes", std::move(nodes)}});
    }
    json j{{"feature_dim", model.feature_dim}, {"config", std::move(cfg)}, {"trees", std::move(trees)}};
    return j.dump() + "\n";
}

ForestModel parse_forest_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedLine, std::string("forest: ") + e.what());
    }
    try {
        ForestModel m;
        m.feature_dim = j.at("feature_dim").get<int>();
        const auto& c = j.at("config");
        m.config.n_trees = c.at("n_trees").get<int>();
        m.config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
        m.config.features_per_split = c.at("features_per_split").get<int>();
        m.config.bootstrap = c.at("bootstrap").get<bool>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        if (!c.at("max_depth").is_null()) m.config.max_depth = c.at("max_depth").get<int>();
        for (const auto& tj : j.at("trees")) {
            DecisionTree t;
            t.seed = tj.at("seed").get<std::uint64_t>();
            const auto& nodes = tj.at("nodes");
            const auto count = static_cast<int>(nodes.size());
            for (const auto& nj : nodes) {
                TreeNode n;
                if (nj.contains("counts")) {
                    n.counts = nj.at("counts").get<std::array<std::size_t, 2>>();
                    if (n.counts[0] + n.counts[1] == 0) throw Error(Errc::SchemaViolation, "leaf with zero counts");
                } else {
                    n.feature = nj.at("feat").get<int>();
                    n.threshold = nj.at("thr").get<double>();
                    n.left = nj.at("left").get<int>();
                    n.right = nj.at("right").get<int>();
                    const int self = static_cast<int>(t.nodes.size());
                    if (n.feature < 0 || n.feature >= m.feature_dim) {
                        throw Error(Errc::SchemaViolation, "split feature out of range");
                    }
                    if (n.left <= self || n.right <= self || n.left >= count || n.right >= count) {
                        throw Error(Errc::SchemaViolation, "child index out of range");
                    }
                }
                t.nodes.push_back(n);
            }
            if (t.nodes.empty()) throw Error(Errc::SchemaViolation, "tree without nodes");
            m.trees.push_back(std::move(t));
        }
        return m;
    } catch (const json::exception& e) {
        throw Error(Errc::SchemaViolation, std::string("forest: ") + e.what());
    }
}

void save_forest(const std::filesystem::path& path, const ForestModel& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << forest_json(model);
}

ForestModel load_forest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_forest_json(ss.str());
}

std::string metrics_table_json(const ClassificationReport& val, const ClassificationReport& test) {
    json j = json::object();
    j["Validation Accuracy"] = val.accuracy;
    j["Validation Precision"] = val.precision;
    j["Validation Recall"] = val.recall;
    j["Validation F1 Score"] = val.f1;
    j["Test Accuracy"] = test.accuracy;
    j["Test Precision"] = test.precision;
    j["Test Recall"] = test.recall;
    j["Test F1 Score"] = test.f1;
    return j.dump(2) + "\n";
}

}  // namespace polystyle
