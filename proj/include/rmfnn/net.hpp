#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rmfnn/linalg.hpp"

namespace rmfnn::net {

/// Architecture of a ReLU feedforward network. Hidden layers apply ReLU,
/// the output layer is affine. When shortcut_period > 0, identity skips
/// wrap groups of that many hidden layers, starting after the first hidden
/// layer (the input projection carries no skip); a trailing group shorter
/// than the period stays plain.
struct NetworkSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_dim = 1;
    std::size_t shortcut_period = 0;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t layer_count() const { return hidden_widths.size() + 1; }
};

struct Network {
    NetworkSpec spec;
    std::vector<Matrix> weights;               // weights[l]: N_l x N_{l-1}
    std::vector<std::vector<double>> biases;   // biases[l]: N_l

    std::size_t parameter_count() const;
};

struct TrainConfig {
    std::size_t epochs = 0;
    std::size_t batch_size = 1;
    double initial_lr = 0.005;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double tikhonov_lambda = 1e-6;
    double validation_fraction = 0.05;
    std::size_t plateau_patience = 50;
    double plateau_factor = 0.5;
    double min_lr = 1e-6;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> train_loss_history;
    std::vector<double> val_loss_history;
    std::vector<double> lr_history;
    std::size_t epochs_run = 0;
    double wall_time_s = 0.0;
};

/// Supervised rows: inputs.rows == targets.rows.
struct Samples {
    Matrix inputs;
    Matrix targets;

    std::size_t size() const { return inputs.rows; }
    Samples select(std::span<const std::size_t> rows) const;
};

struct Gradients {
    std::vector<Matrix> weight_grads;
    std::vector<std::vector<double>> bias_grads;
};

struct AdamState {
    std::vector<Matrix> m_weights, v_weights;
    std::vector<std::vector<double>> m_biases, v_biases;
    std::size_t step_count = 0;

    static AdamState for_network(const Network& n);
};

struct TrainingDivergedError : std::runtime_error {
    std::size_t epoch;
    explicit TrainingDivergedError(std::size_t ep)
        : std::runtime_error("training diverged (non-finite loss) at epoch " +
                             std::to_string(ep)),
          epoch(ep) {}
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// He-scaled Gaussian weights (std = sqrt(2/fan_in)), zero biases,
/// deterministic in spec.seed.
Network init_network(const NetworkSpec& spec);

std::vector<double> forward(const Network& n, std::span<const double> x);

/// MSE over the batch plus lambda * sum of squared weights.
double loss(const Network& n, const Samples& batch, double lambda);

Gradients gradients(const Network& n, const Samples& batch, double lambda);

void adam_step(Network& n, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg, double lr);

struct TrainResult {
    Network network;
    TrainReport report;
};

/// Mini-batch Adam with a seeded shuffle/split, reduce-on-plateau learning
/// rate, and best-validation snapshotting. Fully deterministic per seed.
TrainResult train(const Samples& data, const NetworkSpec& spec, const TrainConfig& cfg);

void save_network(const Network& n, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace rmfnn::net
