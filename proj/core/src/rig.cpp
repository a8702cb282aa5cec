#include "facerig/rig.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <unordered_set>

#include "facerig/errors.hpp"

namespace facerig {

void BlendWeights::validate() const {
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractViolation("blend weight " + std::to_string(i) + " = " + std::to_string(v) +
                              " is outside [0, 1]");
    }
  }
}

std::vector<std::string> CharacterRig::channel_names() const {
  std::vector<std::string> names;
  names.reserve(blendshapes.size());
  for (const auto& b : blendshapes) names.push_back(b.name);
  return names;
}

VertexPositions apply_blendweights(const CharacterRig& rig, const BlendWeights& alpha) {
  if (alpha.size() != rig.channel_count()) {
    throw ContractViolation("blend weights have length " + std::to_string(alpha.size()) + ", rig has " +
                            std::to_string(rig.channel_count()) + " channels");
  }
  VertexPositions out{rig.base_vertices};
  for (int k = 0; k < rig.channel_count(); ++k) {
    const double w = alpha.values(k);
    if (w != 0.0) out.positions += w * rig.blendshapes[k].delta;
  }
  return out;
}

LandmarkSet3D rig_landmarks(const CharacterRig& rig, const BlendWeights& alpha) {
  return gather_landmarks(apply_blendweights(rig, alpha), rig.landmark_map);
}

std::vector<RigDiagnostic> validate_rig(const CharacterRig& rig) {
  using Severity = RigDiagnostic::Severity;
  std::vector<RigDiagnostic> out;
  const auto n3 = rig.base_vertices.size();
  const int w = rig.vertex_count();
  if (n3 == 0 || n3 % 3 != 0) {
    out.push_back({Severity::error, "base_vertices", "length " + std::to_string(n3) + " is not a positive multiple of 3"});
  }
  if (rig.blendshapes.empty()) out.push_back({Severity::error, "blendshapes", "rig needs at least one blendshape"});

  std::set<std::string> names;
  for (std::size_t k = 0; k < rig.blendshapes.size(); ++k) {
    const auto& b = rig.blendshapes[k];
    if (!names.insert(b.name).second) {
      out.push_back({Severity::error, "blendshapes[" + std::to_string(k) + "].name", "duplicate blendshape name '" + b.name + "'"});
    }
    if (b.delta.size() != n3) {
      out.push_back({Severity::error, "blendshapes[" + std::to_string(k) + "].delta",
                     "length " + std::to_string(b.delta.size()) + " != 3W = " + std::to_string(n3)});
    }
  }

  bool landmarks_ok = true;
  if (rig.landmark_map.size() != kLandmarkCount) {
    out.push_back({Severity::error, "landmark_map", "has " + std::to_string(rig.landmark_map.size()) + " entries, expected 68"});
    landmarks_ok = false;
  }
  std::unordered_set<int> seen;
  for (std::size_t n = 0; n < rig.landmark_map.size(); ++n) {
    const int idx = rig.landmark_map[n];
    if (idx < 0 || idx >= w) {
      out.push_back({Severity::error, "landmark_map[" + std::to_string(n) + "]", "index " + std::to_string(idx) + " out of range"});
      landmarks_ok = false;
    } else if (!seen.insert(idx).second) {
      out.push_back({Severity::error, "landmark_map[" + std::to_string(n) + "]", "duplicate index " + std::to_string(idx)});
      landmarks_ok = false;
    }
  }
  for (std::size_t f = 0; f < rig.faces.size(); ++f) {
    for (int idx : rig.faces[f]) {
      if (idx < 0 || idx >= w) {
        out.push_back({Severity::error, "faces[" + std::to_string(f) + "]", "vertex index " + std::to_string(idx) + " out of range"});
        break;
      }
    }
  }

  if (landmarks_ok) {
    for (std::size_t k = 0; k < rig.blendshapes.size(); ++k) {
      const auto& b = rig.blendshapes[k];
      if (b.delta.size() != n3) continue;
      double visible = 0.0;
      for (int idx : rig.landmark_map) visible += b.delta.segment<3>(3 * idx).squaredNorm();
      if (visible == 0.0) {
        out.push_back({Severity::warning, "blendshapes[" + std::to_string(k) + "]",
                       "unobservable channel '" + b.name + "' - adapter cannot learn it"});
      }
    }
  }
  return out;
}

bool rig_is_usable(const std::vector<RigDiagnostic>& diagnostics) {
  return std::none_of(diagnostics.begin(), diagnostics.end(),
                      [](const RigDiagnostic& d) { return d.severity == RigDiagnostic::Severity::error; });
}

CharacterRig generate_synthetic_rig(const MorphableModel& model, const SyntheticRigOptions& options) {
  if (options.blendshapes < 1) throw ContractViolation("a rig needs at least one blendshape");
  if (!(options.mix_sparsity > 0.0 && options.mix_sparsity <= 1.0)) {
    throw ContractViolation("mix_sparsity must lie in (0, 1]");
  }
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  CharacterRig rig;
  rig.name = options.name.empty() ? "synthetic_k" + std::to_string(options.blendshapes) : options.name;
  rig.base_vertices = model.mean_shape();
  rig.faces = synthetic_grid_faces(model.vertex_count());
  rig.landmark_map = model.landmark_indices();

  const LandmarkMatrix3 neutral = model.landmark_mean();
  const double width = neutral.col(0).maxCoeff() - neutral.col(0).minCoeff();
  const double target_norm = options.channel_magnitude * width * std::sqrt(static_cast<double>(kLandmarkCount));
  const int active = std::max(1, static_cast<int>(std::lround(options.mix_sparsity * kExpressionDim)));

  std::vector<int> slots(kExpressionDim);
  for (int k = 0; k < options.blendshapes; ++k) {
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    Eigen::VectorXd mix = Eigen::VectorXd::Zero(kExpressionDim);
    for (int j = 0; j < active; ++j) mix(slots[j]) = normal(rng);
    const double visible = (model.landmark_expr_basis() * mix).norm();
    mix *= target_norm / visible;
    rig.blendshapes.push_back({"bs_" + std::to_string(k), model.expr_basis() * mix});
  }
  return rig;
}

Eigen::MatrixXd expression_mixing(const MorphableModel& model, const CharacterRig& rig) {
  if (rig.base_vertices.size() != model.mean_shape().size()) {
    throw ContractViolation("rig mesh does not match the model mesh");
  }
  Eigen::MatrixXd mix(kExpressionDim, rig.channel_count());
  for (int k = 0; k < rig.channel_count(); ++k) mix.col(k) = model.expr_basis().transpose() * rig.blendshapes[k].delta;
  return mix;
}

}  // namespace facerig
