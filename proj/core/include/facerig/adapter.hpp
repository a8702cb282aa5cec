#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "facerig/datagen.hpp"
#include "facerig/model.hpp"

namespace facerig {

enum class Activation { relu, leaky_relu };

std::string to_string(Activation activation);
/// Accepts "relu" / "leaky_relu" (also "leaky", "leakyrelu"). Throws ContractViolation otherwise.
Activation parse_activation(const std::string& text);

struct AdapterConfig {
  int in_dim = kExpressionDim;
  int hidden_dim = 256;
  int out_dim = 25;
  Activation activation = Activation::leaky_relu;
  double leaky_slope = 0.01;
  bool clamp_output = true;

  void validate() const;
  /// Layer description such as "Linear->LeakyReLU->Linear->Clamp".
  [[nodiscard]] std::string layers() const;
};

/// Two linear layers with an activation in between and an optional [0, 1] clamp.
struct AdapterNet {
  AdapterConfig config;
  Eigen::MatrixXd w1;  // hidden x in
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // out x hidden
  Eigen::VectorXd b2;

  static AdapterNet zeros(const AdapterConfig& config);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias; the
  /// output bias is additionally shifted by 0.5, the middle of the valid range.
  static AdapterNet initialized(const AdapterConfig& config, std::uint64_t seed);
  /// Throws ContractViolation if the matrix shapes disagree with config.
  void validate() const;
};

/// Same shapes as AdapterNet.
struct AdapterGradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

/// Output for one expression vector, clamped when the config asks for it.
Eigen::VectorXd forward(const AdapterNet& net, const ExpressionParams& gamma);

/// Column-wise forward over a 64 x N batch.
Eigen::MatrixXd forward_batch(const AdapterNet& net, const Eigen::MatrixXd& gammas);

/// Mean over channels of squared differences.
double loss_mse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& target);

/// Exact gradient of loss_mse(forward(net, gamma), target). The clamp passes
/// gradient on [0, 1] and blocks it outside; the activation derivative at
/// zero is the negative-side slope (0 for ReLU).
AdapterGradients backward(const AdapterNet& net, const ExpressionParams& gamma, const Eigen::VectorXd& target);

/// Gradient of the batch-mean loss over columns of `gammas` / `targets`.
/// Returns the loss through `loss_out` when non-null.
AdapterGradients backward_batch(const AdapterNet& net, const Eigen::MatrixXd& gammas, const Eigen::MatrixXd& targets,
                                double* loss_out = nullptr);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainReport {
  std::vector<double> train_mse;  // per epoch
  std::vector<double> val_mae;    // per epoch; empty when there is no validation split
  std::optional<double> test_mae;
  int best_epoch = -1;
  double seconds = 0.0;
};

struct TrainResult {
  AdapterNet net;
  TrainReport report;
};

/// Mini-batch Adam on the MSE loss from a seeded initialization. Returns the
/// epoch with the best validation MAE (the last epoch when val is empty).
/// Throws DivergenceError on a non-finite loss.
TrainResult train(const AdapterConfig& config, const TrainConfig& tconfig, const GeneratedDataset& dataset);

/// Continues Adam from `start` on `pairs` for tconfig.epochs and returns the
/// final weights. Used by finetuning.
AdapterNet continue_training(const AdapterNet& start, std::span<const SamplePair> pairs, const TrainConfig& tconfig,
                             std::vector<double>* train_mse = nullptr);

/// Mean over samples and channels of |forward(gamma) - alpha|.
double evaluate_mae(const AdapterNet& net, std::span<const SamplePair> pairs);

struct AblationRow {
  AdapterConfig config;
  double mae = 0.0;
  TrainReport report;
};

/// Trains every config with the same TrainConfig and reports test MAE.
std::vector<AblationRow> run_ablation_grid(const GeneratedDataset& dataset, const std::vector<AdapterConfig>& grid,
                                           const TrainConfig& tconfig);

/// The six adapter variants compared in the architecture ablation: ReLU with
/// hidden 256/100/384, LeakyReLU 256, and both activations with a clamp.
std::vector<AdapterConfig> standard_ablation_grid(int out_dim);

}  // namespace facerig
