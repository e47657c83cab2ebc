#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polystyle/metrics.hpp"
#include "polystyle/types.hpp"

namespace polystyle {

/// Feed-forward encoder shared by both branches of the Siamese pair.
/// Hidden layers use a rectifier; the output layer is linear.
struct EncoderModel {
    std::vector<int> layer_dims;   // [input, hidden..., latent]
    std::vector<Matrix> weights;   // weights[l] is layer_dims[l+1] x layer_dims[l]
    std::vector<Vector> biases;

    int input_dim() const { return layer_dims.front(); }
    int latent_dim() const { return layer_dims.back(); }
    std::size_t n_layers() const { return weights.size(); }
    std::size_t parameter_count() const;

    static EncoderModel zeros(const std::vector<int>& layer_dims);
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    static EncoderModel glorot(const std::vector<int>& layer_dims, std::uint64_t seed);

    void validate() const;
    bool operator==(const EncoderModel& o) const;
};

/// Same shapes as the model's parameters.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    static Gradients zeros_like(const EncoderModel& model);
    bool all_zero() const;
};

Vector encode(const EncoderModel& model, const Vector& input);
/// Column-wise encoding of a (input_dim x batch) matrix.
Matrix encode_batch(const EncoderModel& model, const Matrix& inputs);

/// (1-y)/2 * D^2 + y/2 * max(0, m - D)^2
double contrastive_loss(int y, double distance, double margin);
/// dL/dD; the hinge kink at D == m takes the one-sided value 0.
double contrastive_loss_slope(int y, double distance, double margin);

double pair_loss(const EncoderModel& model, const Vector& a, const Vector& b, int y, double margin);

/// Gradient of the pair loss with respect to every shared parameter; both
/// branches accumulate into one set. The distance derivative at D = 0 is 0.
Gradients loss_gradient(const EncoderModel& model, const Vector& a, const Vector& b, int y,
                        double margin);

/// Mean loss and its gradient over a batch of pairs given as columns.
double batch_loss_gradient(const EncoderModel& model, const Matrix& a, const Matrix& b,
                           std::span<const int> labels, double margin, Gradients* grads);

struct PairExample {
    Vector a;
    Vector b;
    int label = 0;
};

struct TrainConfig {
    std::vector<int> hidden_dims{512, 256};
    int latent_dim = 128;
    double margin = 1.0;
    int epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::optional<double> threshold;  // defaults to margin / 2
    bool tune_threshold = true;       // maximize validation F1
    bool both_orders = false;         // also present (b, a) for each training pair
    std::uint64_t seed = 0;

    double default_threshold() const { return threshold.value_or(margin / 2.0); }
    void validate() const;
};

/// Adaptive first-order optimizer state (first and second moment estimates).
class AdamOptimizer {
public:
    AdamOptimizer(const EncoderModel& model, const TrainConfig& cfg);
    void step(EncoderModel& model, const Gradients& grads);

private:
    Gradients m_, v_;
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_recall = 0.0;
    double val_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    double threshold = 0.0;  // tau used for classification after training
    double test_loss = 0.0;
    std::optional<ClassificationReport> val_report;
    std::optional<ClassificationReport> test_report;
};

struct TrainResult {
    EncoderModel model;  // parameters from the best validation epoch
    TrainHistory history;
};

TrainResult train(const std::vector<PairExample>& train_set, const std::vector<PairExample>& val_set,
                  const std::vector<PairExample>& test_set, const TrainConfig& cfg);

/// Latent distances for each pair.
std::vector<double> pair_distances(const EncoderModel& model, const std::vector<PairExample>& pairs);
double mean_pair_loss(const EncoderModel& model, const std::vector<PairExample>& pairs, double margin);

struct PairDecision {
    int label = 0;  // 0 when the latent distance is below tau
    double distance = 0.0;
};

PairDecision classify_pair(const EncoderModel& model, const Vector& a, const Vector& b, double tau);

/// Threshold maximizing F1 (label 1 positive) when predicting 1 for D >= tau;
/// candidates are midpoints between consecutive distinct distances.
double tune_threshold(std::span<const double> distances, std::span<const int> labels);

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const TrainConfig& cfg, const TrainHistory& history);

struct Checkpoint {
    EncoderModel model;
    double margin = 1.0;
    double threshold = 0.5;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// epoch,train_loss,val_loss,recall
std::string loss_curve_csv(const TrainHistory& history);

}  // namespace polystyle
