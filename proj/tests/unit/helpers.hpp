#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/QR>

#include "facerig/adapter.hpp"
#include "facerig/model.hpp"
#include "facerig/rig.hpp"

namespace facerig::testing {

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

/// Small synthetic model shared by tests that only need a valid instance.
inline const MorphableModel& small_model() {
  static const MorphableModel model = generate_synthetic_model(7, 150, 10);
  return model;
}

inline const CharacterRig& small_rig() {
  static const CharacterRig rig = [] {
    SyntheticRigOptions o;
    o.blendshapes = 8;
    o.seed = 11;
    return generate_synthetic_rig(small_model(), o);
  }();
  return rig;
}

/// Removes the directory on scope exit.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("facerig_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

/// Central-difference check of `backward` for one input. Returns the largest
/// per-tensor relative error, or nullopt when a hidden or clamp pre-activation
/// lies within `margin` of a kink.
inline std::optional<double> gradient_relative_error(const AdapterNet& net, const ExpressionParams& gamma,
                                                     const Eigen::VectorXd& target, double h = 1e-5,
                                                     double margin = 1e-3) {
  const Eigen::VectorXd pre = net.w1 * gamma.values + net.b1;
  if (pre.cwiseAbs().minCoeff() < margin) return std::nullopt;
  if (net.config.clamp_output) {
    const double slope = net.config.activation == Activation::relu ? 0.0 : net.config.leaky_slope;
    const Eigen::VectorXd hid = pre.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
    const Eigen::VectorXd out = net.w2 * hid + net.b2;
    if (out.cwiseAbs().minCoeff() < margin || (out.array() - 1.0).abs().minCoeff() < margin) return std::nullopt;
  }
  const AdapterGradients g = backward(net, gamma, target);
  AdapterNet probe = net;
  auto loss = [&] { return loss_mse(forward(probe, gamma), target); };
  auto tensor_error = [&](auto& param, const auto& analytic) {
    Eigen::MatrixXd numeric(param.rows(), param.cols());
    for (Eigen::Index c = 0; c < param.cols(); ++c) {
      for (Eigen::Index r = 0; r < param.rows(); ++r) {
        const double keep = param(r, c);
        param(r, c) = keep + h;
        const double up = loss();
        param(r, c) = keep - h;
        const double down = loss();
        param(r, c) = keep;
        numeric(r, c) = (up - down) / (2.0 * h);
      }
    }
    const Eigen::MatrixXd a = analytic;
    const double scale = std::max({a.norm(), numeric.norm(), 1e-12});
    return (a - numeric).norm() / scale;
  };
  return std::max({tensor_error(probe.w1, g.w1), tensor_error(probe.b1, g.b1), tensor_error(probe.w2, g.w2),
                   tensor_error(probe.b2, g.b2)});
}

/// Exact linear adapter for a rig built on `model`'s mesh: alpha = pinv(M) * gamma,
/// written as ReLU(+x) - ReLU(-x) so it fits the two-layer form.
inline AdapterNet oracle_adapter(const MorphableModel& model, const CharacterRig& rig) {
  const Eigen::MatrixXd mix = expression_mixing(model, rig);
  const Eigen::MatrixXd pinv = mix.completeOrthogonalDecomposition().pseudoInverse();
  AdapterConfig c;
  c.hidden_dim = 2 * kExpressionDim;
  c.out_dim = rig.channel_count();
  c.activation = Activation::relu;
  c.clamp_output = true;
  AdapterNet net = AdapterNet::zeros(c);
  net.w1.topRows(kExpressionDim).setIdentity();
  net.w1.bottomRows(kExpressionDim) = -Eigen::MatrixXd::Identity(kExpressionDim, kExpressionDim);
  net.w2.leftCols(kExpressionDim) = pinv;
  net.w2.rightCols(kExpressionDim) = -pinv;
  return net;
}

}  // namespace facerig::testing
