#include "facerig/adapter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "facerig/errors.hpp"

namespace facerig {

std::string to_string(Activation activation) {
  return activation == Activation::relu ? "relu" : "leaky_relu";
}

Activation parse_activation(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "relu") return Activation::relu;
  if (t == "leaky_relu" || t == "leaky" || t == "leakyrelu" || t == "leaky-relu") return Activation::leaky_relu;
  throw ContractViolation("unknown activation '" + text + "' (expected relu or leaky_relu)");
}

void AdapterConfig::validate() const {
  if (in_dim != kExpressionDim) throw ContractViolation("adapter in_dim must be 64, got " + std::to_string(in_dim));
  if (hidden_dim < 1) throw ContractViolation("adapter hidden_dim must be positive");
  if (out_dim < 1) throw ContractViolation("adapter out_dim must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ContractViolation("leaky_slope must lie in [0, 1)");
}

std::string AdapterConfig::layers() const {
  std::string s = "Linear->";
  s += activation == Activation::relu ? "ReLU" : "LeakyReLU";
  s += "->Linear";
  if (clamp_output) s += "->Clamp";
  return s;
}

AdapterNet AdapterNet::zeros(const AdapterConfig& config) {
  config.validate();
  AdapterNet net;
  net.config = config;
  net.w1 = Eigen::MatrixXd::Zero(config.hidden_dim, config.in_dim);
  net.b1 = Eigen::VectorXd::Zero(config.hidden_dim);
  net.w2 = Eigen::MatrixXd::Zero(config.out_dim, config.hidden_dim);
  net.b2 = Eigen::VectorXd::Zero(config.out_dim);
  return net;
}

AdapterNet AdapterNet::initialized(const AdapterConfig& config, std::uint64_t seed) {
  AdapterNet net = zeros(config);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
  };
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(config.in_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  fill(net.w1, bound1);
  fill(net.b1, bound1);
  fill(net.w2, bound2);
  fill(net.b2, bound2);
  // Centre the output bias on the blend-weight range so no channel starts
  // saturated under the clamp (saturated channels receive no gradient).
  net.b2.array() += 0.5;
  return net;
}

void AdapterNet::validate() const {
  config.validate();
  if (w1.rows() != config.hidden_dim || w1.cols() != config.in_dim || b1.size() != config.hidden_dim ||
      w2.rows() != config.out_dim || w2.cols() != config.hidden_dim || b2.size() != config.out_dim) {
    throw ContractViolation("adapter weights do not match config (" + std::to_string(config.in_dim) + " -> " +
                            std::to_string(config.hidden_dim) + " -> " + std::to_string(config.out_dim) + ")");
  }
}

namespace {

double negative_slope(const AdapterConfig& c) {
  return c.activation == Activation::relu ? 0.0 : c.leaky_slope;
}

struct BatchForward {
  Eigen::MatrixXd hidden_pre;
  Eigen::MatrixXd hidden;
  Eigen::MatrixXd out_pre;
  Eigen::MatrixXd out;
};

BatchForward run_forward(const AdapterNet& net, const Eigen::MatrixXd& x) {
  BatchForward f;
  f.hidden_pre = net.w1 * x;
  f.hidden_pre.colwise() += net.b1;
  const double slope = negative_slope(net.config);
  f.hidden = f.hidden_pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  f.out_pre = net.w2 * f.hidden;
  f.out_pre.colwise() += net.b2;
  f.out = net.config.clamp_output ? Eigen::MatrixXd(f.out_pre.cwiseMax(0.0).cwiseMin(1.0)) : f.out_pre;
  return f;
}

void check_input_rows(const AdapterNet& net, Eigen::Index rows) {
  if (rows != net.config.in_dim) {
    throw ContractViolation("adapter input has " + std::to_string(rows) + " rows, expected " +
                            std::to_string(net.config.in_dim));
  }
}

void pack(std::span<const SamplePair> pairs, int out_dim, Eigen::MatrixXd& x, Eigen::MatrixXd& t) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  x.resize(kExpressionDim, n);
  t.resize(out_dim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    if (p.gamma.values.size() != kExpressionDim) throw ContractViolation("sample gamma must have length 64");
    if (p.alpha.size() != out_dim) {
      throw ContractViolation("sample alpha has length " + std::to_string(p.alpha.size()) + ", adapter outputs " +
                              std::to_string(out_dim));
    }
    x.col(i) = p.gamma.values;
    t.col(i) = p.alpha.values;
  }
}

struct AdamState {
  AdapterGradients m;
  AdapterGradients v;
  long step = 0;

  explicit AdamState(const AdapterNet& net) {
    m = {Eigen::MatrixXd::Zero(net.w1.rows(), net.w1.cols()), Eigen::VectorXd::Zero(net.b1.size()),
         Eigen::MatrixXd::Zero(net.w2.rows(), net.w2.cols()), Eigen::VectorXd::Zero(net.b2.size())};
    v = m;
  }
};

template <typename Param, typename Grad>
void adam_update(Param& p, const Grad& g, Param& m, Param& v, const TrainConfig& tc, double c1, double c2) {
  m = tc.beta1 * m + (1.0 - tc.beta1) * g;
  v = tc.beta2 * v + (1.0 - tc.beta2) * g.cwiseAbs2();
  p.array() -= tc.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + tc.epsilon);
}

void adam_step(AdapterNet& net, const AdapterGradients& g, AdamState& s, const TrainConfig& tc) {
  ++s.step;
  const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(s.step));
  adam_update(net.w1, g.w1, s.m.w1, s.v.w1, tc, c1, c2);
  adam_update(net.b1, g.b1, s.m.b1, s.v.b1, tc, c1, c2);
  adam_update(net.w2, g.w2, s.m.w2, s.v.w2, tc, c1, c2);
  adam_update(net.b2, g.b2, s.m.b2, s.v.b2, tc, c1, c2);
}

double batch_mae(const AdapterNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t) {
  return (run_forward(net, x).out - t).cwiseAbs().mean();
}

// One pass over the data in a seeded order; returns the sample-weighted mean batch loss.
double run_epoch(AdapterNet& net, AdamState& adam, const Eigen::MatrixXd& x, const Eigen::MatrixXd& t,
                 std::vector<Eigen::Index>& order, std::mt19937_64& shuffle_rng, const TrainConfig& tc, int epoch) {
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  const auto n = static_cast<Eigen::Index>(order.size());
  Eigen::MatrixXd bx;
  Eigen::MatrixXd bt;
  double weighted = 0.0;
  for (Eigen::Index start = 0; start < n; start += tc.batch_size) {
    const Eigen::Index len = std::min<Eigen::Index>(tc.batch_size, n - start);
    bx.resize(x.rows(), len);
    bt.resize(t.rows(), len);
    for (Eigen::Index j = 0; j < len; ++j) {
      bx.col(j) = x.col(order[static_cast<std::size_t>(start + j)]);
      bt.col(j) = t.col(order[static_cast<std::size_t>(start + j)]);
    }
    double loss = 0.0;
    const AdapterGradients g = backward_batch(net, bx, bt, &loss);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at epoch " << epoch << " (learning rate " << tc.learning_rate << ")";
      throw DivergenceError(msg.str());
    }
    weighted += loss * static_cast<double>(len);
    adam_step(net, g, adam, tc);
  }
  return weighted / static_cast<double>(n);
}

constexpr std::uint64_t kShuffleStream = 0x9E3779B97F4A7C15ULL;

}  // namespace

Eigen::VectorXd forward(const AdapterNet& net, const ExpressionParams& gamma) {
  check_input_rows(net, gamma.values.size());
  return run_forward(net, gamma.values).out.col(0);
}

Eigen::MatrixXd forward_batch(const AdapterNet& net, const Eigen::MatrixXd& gammas) {
  check_input_rows(net, gammas.rows());
  return run_forward(net, gammas).out;
}

double loss_mse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& target) {
  if (predicted.size() != target.size()) {
    throw ContractViolation("loss inputs have lengths " + std::to_string(predicted.size()) + " and " +
                            std::to_string(target.size()));
  }
  if (predicted.size() == 0) throw ContractViolation("loss inputs are empty");
  return (predicted - target).squaredNorm() / static_cast<double>(predicted.size());
}

AdapterGradients backward_batch(const AdapterNet& net, const Eigen::MatrixXd& gammas, const Eigen::MatrixXd& targets,
                                double* loss_out) {
  check_input_rows(net, gammas.rows());
  if (targets.rows() != net.config.out_dim || targets.cols() != gammas.cols()) {
    throw ContractViolation("target batch shape does not match adapter output");
  }
  const BatchForward f = run_forward(net, gammas);
  const Eigen::MatrixXd diff = f.out - targets;
  const double denom = static_cast<double>(diff.size());
  if (loss_out != nullptr) *loss_out = diff.squaredNorm() / denom;

  Eigen::MatrixXd d_out = (2.0 / denom) * diff;
  if (net.config.clamp_output) {
    d_out = d_out.cwiseProduct(f.out_pre.unaryExpr([](double v) { return (v >= 0.0 && v <= 1.0) ? 1.0 : 0.0; }));
  }
  AdapterGradients g;
  g.w2 = d_out * f.hidden.transpose();
  g.b2 = d_out.rowwise().sum();
  const double slope = negative_slope(net.config);
  const Eigen::MatrixXd d_hidden =
      (net.w2.transpose() * d_out).cwiseProduct(f.hidden_pre.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }));
  g.w1 = d_hidden * gammas.transpose();
  g.b1 = d_hidden.rowwise().sum();
  return g;
}

AdapterGradients backward(const AdapterNet& net, const ExpressionParams& gamma, const Eigen::VectorXd& target) {
  return backward_batch(net, gamma.values, target);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ContractViolation("learning_rate must be >= 0");
  if (batch_size < 1) throw ContractViolation("batch_size must be positive");
  if (epochs < 1) throw ContractViolation("epochs must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw ContractViolation("invalid Adam hyperparameters");
  }
}

TrainResult train(const AdapterConfig& config, const TrainConfig& tconfig, const GeneratedDataset& dataset) {
  config.validate();
  tconfig.validate();
  if (dataset.train.empty()) throw ContractViolation("dataset has no training samples");
  if (dataset.channel_count() != config.out_dim) {
    throw ContractViolation("dataset has " + std::to_string(dataset.channel_count()) + " channels, adapter out_dim is " +
                            std::to_string(config.out_dim));
  }
  const auto started = std::chrono::steady_clock::now();

  Eigen::MatrixXd x_train, t_train, x_val, t_val;
  pack(dataset.train, config.out_dim, x_train, t_train);
  pack(dataset.val, config.out_dim, x_val, t_val);

  AdapterNet net = AdapterNet::initialized(config, tconfig.seed);
  AdamState adam(net);
  std::mt19937_64 shuffle_rng(tconfig.seed ^ kShuffleStream);
  std::vector<Eigen::Index> order(dataset.train.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  TrainResult result{net, {}};
  double best = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < tconfig.epochs; ++epoch) {
    result.report.train_mse.push_back(run_epoch(net, adam, x_train, t_train, order, shuffle_rng, tconfig, epoch));
    if (x_val.cols() > 0) {
      const double mae = batch_mae(net, x_val, t_val);
      result.report.val_mae.push_back(mae);
      if (mae < best) {
        best = mae;
        result.net = net;
        result.report.best_epoch = epoch;
      }
    }
  }
  if (x_val.cols() == 0) {
    result.net = net;
    result.report.best_epoch = tconfig.epochs - 1;
  }
  if (!dataset.test.empty()) result.report.test_mae = evaluate_mae(result.net, dataset.test);
  result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

AdapterNet continue_training(const AdapterNet& start, std::span<const SamplePair> pairs, const TrainConfig& tconfig,
                             std::vector<double>* train_mse) {
  start.validate();
  tconfig.validate();
  if (pairs.empty()) throw ContractViolation("no training pairs");
  Eigen::MatrixXd x, t;
  pack(pairs, start.config.out_dim, x, t);
  AdapterNet net = start;
  AdamState adam(net);
  std::mt19937_64 shuffle_rng(tconfig.seed ^ kShuffleStream);
  std::vector<Eigen::Index> order(pairs.size());
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < tconfig.epochs; ++epoch) {
    const double loss = run_epoch(net, adam, x, t, order, shuffle_rng, tconfig, epoch);
    if (train_mse != nullptr) train_mse->push_back(loss);
  }
  return net;
}

double evaluate_mae(const AdapterNet& net, std::span<const SamplePair> pairs) {
  net.validate();
  if (pairs.empty()) throw ContractViolation("cannot evaluate MAE on an empty set");
  Eigen::MatrixXd x, t;
  pack(pairs, net.config.out_dim, x, t);
  return batch_mae(net, x, t);
}

std::vector<AblationRow> run_ablation_grid(const GeneratedDataset& dataset, const std::vector<AdapterConfig>& grid,
                                           const TrainConfig& tconfig) {
  std::vector<AblationRow> rows;
  for (const auto& config : grid) {
    TrainResult r = train(config, tconfig, dataset);
    if (!r.report.test_mae) throw ContractViolation("ablation needs a non-empty test split");
    rows.push_back({config, *r.report.test_mae, std::move(r.report)});
  }
  return rows;
}

std::vector<AdapterConfig> standard_ablation_grid(int out_dim) {
  auto make = [out_dim](Activation act, int hidden, bool clamp) {
    AdapterConfig c;
    c.out_dim = out_dim;
    c.activation = act;
    c.hidden_dim = hidden;
    c.clamp_output = clamp;
    return c;
  };
  return {make(Activation::relu, 256, false),       make(Activation::relu, 100, false),
          make(Activation::relu, 384, false),       make(Activation::leaky_relu, 256, false),
          make(Activation::relu, 256, true),        make(Activation::leaky_relu, 256, true)};
}

}  // namespace facerig
