#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "facerig/model.hpp"

namespace facerig {

struct Blendshape {
  std::string name;
  Eigen::VectorXd delta;  // length 3W
};

/// Blend weights in [0, 1]^K. Values are not range-checked on construction;
/// `validate` does that where a contract requires it.
struct BlendWeights {
  Eigen::VectorXd values;

  static BlendWeights zero(int k) { return {Eigen::VectorXd::Zero(k)}; }
  [[nodiscard]] int size() const { return static_cast<int>(values.size()); }
  /// Throws ContractViolation unless every entry is finite and in [0, 1].
  void validate() const;
};

/// A character: base mesh, ordered blendshape channels and the 68-point
/// landmark correspondence. Channel order defines channel indices everywhere.
struct CharacterRig {
  std::string name;
  Eigen::VectorXd base_vertices;  // length 3W
  std::vector<std::array<int, 3>> faces;
  std::vector<Blendshape> blendshapes;
  std::vector<int> landmark_map;

  [[nodiscard]] int vertex_count() const { return static_cast<int>(base_vertices.size() / 3); }
  [[nodiscard]] int channel_count() const { return static_cast<int>(blendshapes.size()); }
  [[nodiscard]] std::vector<std::string> channel_names() const;
};

struct RigDiagnostic {
  enum class Severity { warning, error };
  Severity severity = Severity::error;
  std::string field;
  std::string message;
};

/// base + sum_k alpha_k * delta_k.
VertexPositions apply_blendweights(const CharacterRig& rig, const BlendWeights& alpha);

LandmarkSet3D rig_landmarks(const CharacterRig& rig, const BlendWeights& alpha);

/// Structural checks. Errors make the rig unusable; warnings flag channels
/// with no landmark-visible motion.
std::vector<RigDiagnostic> validate_rig(const CharacterRig& rig);

/// True when validate_rig reports no errors (warnings allowed).
bool rig_is_usable(const std::vector<RigDiagnostic>& diagnostics);

struct SyntheticRigOptions {
  int blendshapes = 25;
  std::uint64_t seed = 0;
  /// Fraction of the 64 expression coefficients active in each channel.
  double mix_sparsity = 0.15;
  /// RMS landmark displacement of each channel at full weight, as a fraction
  /// of the neutral landmark face width.
  double channel_magnitude = 0.03;
  std::string name;
};

/// Rig on the model's own mesh whose channels lie in the expression basis
/// span: delta_k = expr_basis * m_k with sparse random m_k, each rescaled to
/// the same landmark displacement magnitude.
CharacterRig generate_synthetic_rig(const MorphableModel& model, const SyntheticRigOptions& options);

/// Expression-space mixing matrix (64 x K) of a rig built on `model`'s mesh:
/// expr_basis^T * delta_k for every channel. Exact for synthetic rigs because
/// the basis columns are orthonormal.
Eigen::MatrixXd expression_mixing(const MorphableModel& model, const CharacterRig& rig);

}  // namespace facerig
