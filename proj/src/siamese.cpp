#include "polystyle/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "polystyle/error.hpp"
#include "polystyle/log.hpp"

namespace polystyle {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Model

std::size_t EncoderModel::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    }
    return n;
}

EncoderModel EncoderModel::zeros(const std::vector<int>& layer_dims) {
    if (layer_dims.size() < 2) throw Error(Errc::ConfigInvalid, "encoder needs at least two layer dims");
    EncoderModel m;
    m.layer_dims = layer_dims;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        if (layer_dims[l] <= 0 || layer_dims[l + 1] <= 0) {
            throw Error(Errc::ConfigInvalid, "layer dims must be positive");
        }
        m.weights.push_back(Matrix::Zero(layer_dims[l + 1], layer_dims[l]));
        m.biases.push_back(Vector::Zero(layer_dims[l + 1]));
    }
    return m;
}

EncoderModel EncoderModel::glorot(const std::vector<int>& layer_dims, std::uint64_t seed) {
    EncoderModel m = zeros(layer_dims);
    std::mt19937_64 gen(seed);
    for (auto& w : m.weights) {
        const double r = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> u(-r, r);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(gen);
        }
    }
    return m;
}

void EncoderModel::validate() const {
    if (layer_dims.size() < 2 || weights.size() != layer_dims.size() - 1 || biases.size() != weights.size()) {
        throw Error(Errc::InconsistentInput, "encoder layer count mismatch");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != layer_dims[l + 1] || weights[l].cols() != layer_dims[l] ||
            biases[l].size() != layer_dims[l + 1]) {
            throw Error(Errc::InconsistentInput, "encoder layer " + std::to_string(l) + " has wrong shape");
        }
        if (!weights[l].allFinite() || !biases[l].allFinite()) {
            throw Error(Errc::NonFiniteValue, "encoder layer " + std::to_string(l) + " is not finite");
        }
    }
}

bool EncoderModel::operator==(const EncoderModel& o) const {
    if (layer_dims != o.layer_dims) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return true;
}

Gradients Gradients::zeros_like(const EncoderModel& model) {
    Gradients g;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        g.weights.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
        g.biases.push_back(Vector::Zero(model.biases[l].size()));
    }
    return g;
}

bool Gradients::all_zero() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (!weights[l].isZero(0.0) || !biases[l].isZero(0.0)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

// acts[0] is the input; acts[l + 1] is the output of layer l.
using Trace = std::vector<Matrix>;

Matrix forward(const EncoderModel& model, const Matrix& x, Trace* trace) {
    if (x.rows() != model.input_dim()) {
        throw Error(Errc::DimensionMismatch, "encoder expects dim " + std::to_string(model.input_dim()) +
                                                 ", got " + std::to_string(x.rows()));
    }
    Matrix a = x;
    if (trace) trace->push_back(a);
    const std::size_t last = model.n_layers() - 1;
    for (std::size_t l = 0; l <= last; ++l) {
        Matrix z = model.weights[l] * a;
        z.colwise() += model.biases[l];
        if (l < last) z = z.cwiseMax(0.0);
        a = std::move(z);
        if (trace) trace->push_back(a);
    }
    return a;
}

void backward(const EncoderModel& model, const Trace& trace, Matrix upstream, Gradients& grads) {
    for (std::size_t l = model.n_layers(); l-- > 0;) {
        grads.weights[l].noalias() += upstream * trace[l].transpose();
        grads.biases[l] += upstream.rowwise().sum();
        if (l == 0) break;
        Matrix down = model.weights[l].transpose() * upstream;
        // Rectifier derivative: 1 where the layer's output was positive.
        upstream = down.cwiseProduct((trace[l].array() > 0.0).cast<double>().matrix());
    }
}

}  // namespace

Vector encode(const EncoderModel& model, const Vector& input) {
    return forward(model, input, nullptr).col(0);
}

Matrix encode_batch(const EncoderModel& model, const Matrix& inputs) {
    return forward(model, inputs, nullptr);
}

double contrastive_loss(int y, double distance, double margin) {
    if (!(margin > 0.0)) throw Error(Errc::InvalidMargin, "margin must be positive");
    const double hinge = std::max(0.0, margin - distance);
    return (1 - y) * 0.5 * distance * distance + y * 0.5 * hinge * hinge;
}

double contrastive_loss_slope(int y, double distance, double margin) {
    if (!(margin > 0.0)) throw Error(Errc::InvalidMargin, "margin must be positive");
    return (1 - y) * distance - y * std::max(0.0, margin - distance);
}

double batch_loss_gradient(const EncoderModel& model, const Matrix& a, const Matrix& b,
                           std::span<const int> labels, double margin, Gradients* grads) {
    if (a.cols() != b.cols() || static_cast<std::size_t>(a.cols()) != labels.size() || a.cols() == 0) {
        throw Error(Errc::LengthMismatch, "batch sides and labels differ in length");
    }
    Trace ta, tb;
    const Matrix za = forward(model, a, grads ? &ta : nullptr);
    const Matrix zb = forward(model, b, grads ? &tb : nullptr);
    const Matrix diff = za - zb;
    const double scale = 1.0 / static_cast<double>(a.cols());

    double total = 0.0;
    Matrix upstream(diff.rows(), diff.cols());
    for (Eigen::Index j = 0; j < diff.cols(); ++j) {
        const double d = diff.col(j).norm();
        const int y = labels[static_cast<std::size_t>(j)];
        total += contrastive_loss(y, d, margin);
        const double coef = d > 0.0 ? contrastive_loss_slope(y, d, margin) / d : 0.0;
        upstream.col(j) = (coef * scale) * diff.col(j);
    }
    if (grads) {
        backward(model, ta, upstream, *grads);
        backward(model, tb, -upstream, *grads);
    }
    return total * scale;
}

double pair_loss(const EncoderModel& model, const Vector& a, const Vector& b, int y, double margin) {
    const int labels[] = {y};
    return batch_loss_gradient(model, a, b, labels, margin, nullptr);
}

Gradients loss_gradient(const EncoderModel& model, const Vector& a, const Vector& b, int y,
                        double margin) {
    if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "pair sides differ in dim");
    Gradients g = Gradients::zeros_like(model);
    const int labels[] = {y};
    batch_loss_gradient(model, a, b, labels, margin, &g);
    return g;
}

// ---------------------------------------------------------------------------
// Optimizer

void TrainConfig::validate() const {
    if (!(margin > 0.0)) throw Error(Errc::InvalidMargin, "margin must be positive");
    if (epochs < 1) throw Error(Errc::ConfigInvalid, "epochs must be positive");
    if (batch_size == 0) throw Error(Errc::ConfigInvalid, "batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw Error(Errc::ConfigInvalid, "learning_rate must be >= 0");
    if (latent_dim < 1) throw Error(Errc::ConfigInvalid, "latent_dim must be positive");
    for (int h : hidden_dims) {
        if (h < 1) throw Error(Errc::ConfigInvalid, "hidden dims must be positive");
    }
    const double tau = default_threshold();
    if (!(tau > 0.0 && tau < margin)) throw Error(Errc::ConfigInvalid, "threshold must lie in (0, margin)");
}

AdamOptimizer::AdamOptimizer(const EncoderModel& model, const TrainConfig& cfg)
    : m_(Gradients::zeros_like(model)),
      v_(Gradients::zeros_like(model)),
      lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.epsilon) {}

void AdamOptimizer::step(EncoderModel& model, const Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseAbs2();
        param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        update(model.weights[l], m_.weights[l], v_.weights[l], grads.weights[l]);
        update(model.biases[l], m_.biases[l], v_.biases[l], grads.biases[l]);
    }
}

// ---------------------------------------------------------------------------
// Training

namespace {

void gather(const std::vector<PairExample>& pairs, std::span<const std::size_t> idx,
            std::span<const char> swapped, Matrix& a, Matrix& b, std::vector<int>& labels) {
    const Eigen::Index dim = pairs.front().a.size();
    a.resize(dim, static_cast<Eigen::Index>(idx.size()));
    b.resize(dim, static_cast<Eigen::Index>(idx.size()));
    labels.resize(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        const PairExample& p = pairs[idx[j]];
        const bool swap = !swapped.empty() && swapped[j];
        a.col(static_cast<Eigen::Index>(j)) = swap ? p.b : p.a;
        b.col(static_cast<Eigen::Index>(j)) = swap ? p.a : p.b;
        labels[j] = p.label;
    }
}

void check_pairs(const std::vector<PairExample>& pairs, int dim, const char* name) {
    for (const auto& p : pairs) {
        if (p.a.size() != dim || p.b.size() != dim) {
            throw Error(Errc::DimensionMismatch, std::string(name) + " pair has the wrong dim");
        }
        if (p.label != 0 && p.label != 1) throw Error(Errc::SchemaViolation, "pair label must be 0 or 1");
    }
}

std::vector<int> labels_of(const std::vector<PairExample>& pairs) {
    std::vector<int> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(p.label);
    return out;
}

std::vector<int> predict(std::span<const double> distances, double tau) {
    std::vector<int> out;
    out.reserve(distances.size());
    for (double d : distances) out.push_back(d < tau ? 0 : 1);
    return out;
}

}  // namespace

std::vector<double> pair_distances(const EncoderModel& model, const std::vector<PairExample>& pairs) {
    std::vector<double> out;
    out.reserve(pairs.size());
    constexpr std::size_t kChunk = 512;
    Matrix a, b;
    std::vector<int> labels;
    std::vector<std::size_t> idx;
    for (std::size_t from = 0; from < pairs.size(); from += kChunk) {
        idx.resize(std::min(kChunk, pairs.size() - from));
        std::iota(idx.begin(), idx.end(), from);
        gather(pairs, idx, {}, a, b, labels);
        const Matrix diff = encode_batch(model, a) - encode_batch(model, b);
        for (Eigen::Index j = 0; j < diff.cols(); ++j) out.push_back(diff.col(j).norm());
    }
    return out;
}

double mean_pair_loss(const EncoderModel& model, const std::vector<PairExample>& pairs, double margin) {
    if (pairs.empty()) return 0.0;
    const auto d = pair_distances(model, pairs);
    double total = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) total += contrastive_loss(pairs[i].label, d[i], margin);
    return total / static_cast<double>(pairs.size());
}

TrainResult train(const std::vector<PairExample>& train_set, const std::vector<PairExample>& val_set,
                  const std::vector<PairExample>& test_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw Error(Errc::EmptyDataset, "training set is empty");
    if (val_set.empty()) throw Error(Errc::EmptyDataset, "validation set is empty");
    const int dim = static_cast<int>(train_set.front().a.size());
    check_pairs(train_set, dim, "training");
    check_pairs(val_set, dim, "validation");
    check_pairs(test_set, dim, "test");

    std::vector<int> dims{dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.latent_dim);

    TrainResult result{EncoderModel::glorot(dims, derive_seed(cfg.seed, "init")), {}};
    EncoderModel& model = result.model;
    TrainHistory& history = result.history;
    EncoderModel best = model;
    history.best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order;
    std::vector<char> swapped;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        order.push_back(i);
        swapped.push_back(0);
        if (cfg.both_orders) {
            order.push_back(i);
            swapped.push_back(1);
        }
    }
    std::vector<std::size_t> perm(order.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});

    AdamOptimizer optimizer(model, cfg);
    std::mt19937_64 shuffle_gen(derive_seed(cfg.seed, "shuffle"));
    const std::vector<int> val_labels = labels_of(val_set);
    const double tau = cfg.default_threshold();

    Matrix a, b;
    std::vector<int> labels;
    std::vector<std::size_t> batch_idx;
    std::vector<char> batch_swap;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(perm.begin(), perm.end(), shuffle_gen);
        double loss_sum = 0.0;
        for (std::size_t from = 0; from < perm.size(); from += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, perm.size() - from);
            batch_idx.resize(count);
            batch_swap.resize(count);
            for (std::size_t j = 0; j < count; ++j) {
                batch_idx[j] = order[perm[from + j]];
                batch_swap[j] = swapped[perm[from + j]];
            }
            gather(train_set, batch_idx, batch_swap, a, b, labels);

            Gradients grads = Gradients::zeros_like(model);
            const double loss = batch_loss_gradient(model, a, b, labels, cfg.margin, &grads);
            if (!std::isfinite(loss)) {
                throw Error(Errc::DivergedLoss, "non-finite training loss in epoch " + std::to_string(epoch));
            }
            optimizer.step(model, grads);
            loss_sum += loss * static_cast<double>(count);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(perm.size());
        const auto val_d = pair_distances(model, val_set);
        double val_total = 0.0;
        for (std::size_t i = 0; i < val_set.size(); ++i) {
            val_total += contrastive_loss(val_set[i].label, val_d[i], cfg.margin);
        }
        rec.val_loss = val_total / static_cast<double>(val_set.size());
        if (!std::isfinite(rec.val_loss)) {
            throw Error(Errc::DivergedLoss, "non-finite validation loss in epoch " + std::to_string(epoch));
        }
        const auto val_pred = predict(val_d, tau);
        const auto rep = classification_report(val_labels, val_pred, false);
        rec.val_recall = rep.recall;
        rec.val_accuracy = rep.accuracy;
        history.epochs.push_back(rec);
        if (rec.val_loss < history.best_val_loss) {
            history.best_val_loss = rec.val_loss;
            history.best_epoch = epoch;
            best = model;
        }
        char line[160];
        std::snprintf(line, sizeof line, "epoch %d train_loss %.6f val_loss %.6f val_recall %.4f", epoch,
                      rec.train_loss, rec.val_loss, rec.val_recall);
        log::info(line);
    }

    model = std::move(best);
    const auto val_d = pair_distances(model, val_set);
    history.threshold = cfg.tune_threshold ? tune_threshold(val_d, val_labels) : tau;
    history.val_report = classification_report(val_labels, predict(val_d, history.threshold), false);
    if (!test_set.empty()) {
        const auto test_d = pair_distances(model, test_set);
        double total = 0.0;
        for (std::size_t i = 0; i < test_set.size(); ++i) {
            total += contrastive_loss(test_set[i].label, test_d[i], cfg.margin);
        }
        history.test_loss = total / static_cast<double>(test_set.size());
        history.test_report =
            classification_report(labels_of(test_set), predict(test_d, history.threshold), false);
    }
    return result;
}

PairDecision classify_pair(const EncoderModel& model, const Vector& a, const Vector& b, double tau) {
    if (a.size() != b.size()) throw Error(Errc::DimensionMismatch, "pair sides differ in dim");
    const double d = (encode(model, a) - encode(model, b)).norm();
    return {d < tau ? 0 : 1, d};
}

double tune_threshold(std::span<const double> distances, std::span<const int> labels) {
    if (distances.size() != labels.size()) throw Error(Errc::LengthMismatch, "distances and labels differ in length");
    if (distances.empty()) throw Error(Errc::EmptyDataset, "cannot tune a threshold on no pairs");
    std::vector<std::size_t> idx(distances.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) { return distances[l] < distances[r]; });

    std::size_t positives = 0;
    for (int y : labels) positives += y == 1;
    // Threshold below every distance: everything is predicted 1.
    std::size_t tp = positives, fp = distances.size() - positives;
    auto f1 = [&](std::size_t tp_, std::size_t fp_) {
        const std::size_t fn_ = positives - tp_;
        const double denom = static_cast<double>(2 * tp_ + fp_ + fn_);
        return denom > 0 ? 2.0 * static_cast<double>(tp_) / denom : 0.0;
    };
    double best_f1 = f1(tp, fp);
    double best_tau = distances[idx.front()] > 0 ? distances[idx.front()] / 2.0 : 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        // Moving the threshold above sorted[k] flips it to predicted 0.
        if (labels[idx[k]] == 1) --tp; else --fp;
        const bool boundary = k + 1 == idx.size() || distances[idx[k + 1]] > distances[idx[k]];
        if (!boundary) continue;
        const double score = f1(tp, fp);
        if (score > best_f1) {
            best_f1 = score;
            best_tau = k + 1 == idx.size() ? distances[idx[k]] + 1.0
                                           : 0.5 * (distances[idx[k]] + distances[idx[k + 1]]);
        }
    }
    return best_tau;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json report_json(const ClassificationReport& r) {
    return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
            {"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"tn", r.tn}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const TrainConfig& cfg, const TrainHistory& history) {
    json j;
    j["layer_dims"] = model.layer_dims;
    j["weights"] = json::array();
    j["biases"] = json::array();
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        const Matrix& w = model.weights[l];
        std::vector<double> flat;
        flat.reserve(static_cast<std::size_t>(w.size()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
        }
        j["weights"].push_back(std::move(flat));
        j["biases"].push_back(std::vector<double>(model.biases[l].data(),
                                                  model.biases[l].data() + model.biases[l].size()));
    }
    j["config"] = {{"hidden_dims", cfg.hidden_dims},
                   {"latent_dim", cfg.latent_dim},
                   {"margin", cfg.margin},
                   {"epochs", cfg.epochs},
                   {"batch_size", cfg.batch_size},
                   {"learning_rate", cfg.learning_rate},
                   {"beta1", cfg.beta1},
                   {"beta2", cfg.beta2},
                   {"epsilon", cfg.epsilon},
                   {"threshold", history.threshold},
                   {"tune_threshold", cfg.tune_threshold},
                   {"both_orders", cfg.both_orders},
                   {"seed", cfg.seed}};
    json epochs = json::array();
    for (const auto& e : history.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"val_recall", e.val_recall},
                          {"val_accuracy", e.val_accuracy}});
    }
    j["history"] = {{"epochs", std::move(epochs)},
                    {"best_epoch", history.best_epoch},
                    {"best_val_loss", history.best_val_loss},
                    {"threshold", history.threshold},
                    {"test_loss", history.test_loss}};
    if (history.val_report) j["history"]["val_report"] = report_json(*history.val_report);
    if (history.test_report) j["history"]["test_report"] = report_json(*history.test_report);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    out << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::MissingFile, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(Errc::MalformedLine, path.string() + ": " + e.what());
    }
    try {
        Checkpoint ck;
        ck.model = EncoderModel::zeros(j.at("layer_dims").get<std::vector<int>>());
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        if (weights.size() != ck.model.n_layers() || biases.size() != ck.model.n_layers()) {
            throw Error(Errc::SchemaViolation, "checkpoint layer count mismatch");
        }
        for (std::size_t l = 0; l < ck.model.n_layers(); ++l) {
            Matrix& w = ck.model.weights[l];
            const auto flat = weights[l].get<std::vector<double>>();
            const auto bias = biases[l].get<std::vector<double>>();
            if (flat.size() != static_cast<std::size_t>(w.size()) ||
                bias.size() != static_cast<std::size_t>(ck.model.biases[l].size())) {
                throw Error(Errc::SchemaViolation, "checkpoint layer " + std::to_string(l) + " has the wrong size");
            }
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                for (Eigen::Index c = 0; c < w.cols(); ++c) {
                    w(r, c) = flat[static_cast<std::size_t>(r * w.cols() + c)];
                }
            }
            ck.model.biases[l] = Eigen::Map<const Vector>(bias.data(), static_cast<Eigen::Index>(bias.size()));
        }
        ck.model.validate();
        ck.margin = j.at("config").at("margin").get<double>();
        ck.threshold = j.at("config").at("threshold").get<double>();
        return ck;
    } catch (const json::exception& e) {
        throw Error(Errc::SchemaViolation, path.string() + ": " + e.what());
    }
}

std::string loss_curve_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,val_loss,recall\n";
    char line[128];
    for (const auto& e : history.epochs) {
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss,
                      e.val_recall);
        out += line;
    }
    return out;
}

}  // namespace polystyle
