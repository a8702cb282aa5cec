#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace facerig {

inline constexpr int kLandmarkCount = 68;
inline constexpr int kExpressionDim = 64;
inline constexpr int kDefaultIdentityDim = 80;

using LandmarkMatrix3 = Eigen::Matrix<double, kLandmarkCount, 3>;
using LandmarkMatrix2 = Eigen::Matrix<double, kLandmarkCount, 2>;

/// Identity coefficients on the identity basis.
struct IdentityParams {
  Eigen::VectorXd values;

  static IdentityParams zero(int dim) { return {Eigen::VectorXd::Zero(dim)}; }
};

/// Expression coefficients; always 64 wide.
struct ExpressionParams {
  Eigen::VectorXd values = Eigen::VectorXd::Zero(kExpressionDim);

  static ExpressionParams zero() { return {}; }
};

/// Flat x,y,z interleaved vertex buffer (length 3V).
struct VertexPositions {
  Eigen::VectorXd positions;

  [[nodiscard]] int vertex_count() const { return static_cast<int>(positions.size() / 3); }
  [[nodiscard]] Eigen::Vector3d vertex(int i) const { return positions.segment<3>(3 * i); }
};

/// 68 points in model space (one row per landmark).
struct LandmarkSet3D {
  LandmarkMatrix3 points = LandmarkMatrix3::Zero();
};

/// 68 points in the image plane.
struct LandmarkSet2D {
  LandmarkMatrix2 points = LandmarkMatrix2::Zero();
};

/// Linear face shape model: mean shape plus identity and expression bases.
///
/// Fields are public for serialization; construct through `make` (or
/// `generate_synthetic_model`) so the invariants are checked once.
class MorphableModel {
public:
  MorphableModel() = default;

  /// Validates dimensions, the 64-column expression basis, and the 68 distinct
  /// in-range landmark indices. Throws ContractViolation otherwise.
  static MorphableModel make(Eigen::VectorXd mean_shape, Eigen::MatrixXd id_basis,
                             Eigen::MatrixXd expr_basis, std::vector<int> landmark_indices);

  [[nodiscard]] int vertex_count() const { return static_cast<int>(mean_shape_.size() / 3); }
  [[nodiscard]] int identity_dim() const { return static_cast<int>(id_basis_.cols()); }
  [[nodiscard]] const Eigen::VectorXd& mean_shape() const { return mean_shape_; }
  [[nodiscard]] const Eigen::MatrixXd& id_basis() const { return id_basis_; }
  [[nodiscard]] const Eigen::MatrixXd& expr_basis() const { return expr_basis_; }
  [[nodiscard]] const std::vector<int>& landmark_indices() const { return landmark_indices_; }

  /// Landmark rows of the mean shape (68 x 3).
  [[nodiscard]] LandmarkMatrix3 landmark_mean() const;
  /// Rows of expr_basis for landmark coordinates, laid out as 204 x 64 with
  /// row 3n+d holding coordinate d of landmark n.
  [[nodiscard]] const Eigen::MatrixXd& landmark_expr_basis() const { return landmark_expr_basis_; }
  [[nodiscard]] const Eigen::MatrixXd& landmark_id_basis() const { return landmark_id_basis_; }

private:
  Eigen::VectorXd mean_shape_;
  Eigen::MatrixXd id_basis_;
  Eigen::MatrixXd expr_basis_;
  std::vector<int> landmark_indices_;
  Eigen::MatrixXd landmark_expr_basis_;
  Eigen::MatrixXd landmark_id_basis_;
};

/// S = mean + B_id * beta + B_exp * gamma.
VertexPositions synthesize_shape(const MorphableModel& model, const IdentityParams& beta,
                                 const ExpressionParams& gamma);

/// Gathers the 68 landmark vertices in landmark_indices order.
LandmarkSet3D select_landmarks(const VertexPositions& vertices, const MorphableModel& model);

/// Gathers arbitrary indices; shared by rigs and models.
LandmarkSet3D gather_landmarks(const VertexPositions& vertices, const std::vector<int>& indices);

struct SyntheticModelOptions {
  std::uint64_t seed = 0;
  int vertex_count = 500;
  int identity_dim = kDefaultIdentityDim;
  /// Share of each expression column's energy placed on landmark x/y coordinates.
  double landmark_energy = 0.8;
};

/// Seeded stand-in for a licensed face model.
///
/// The mean shape is the front patch of an ellipsoid sampled on a near-square
/// grid; landmarks are snapped from a 68-point face template. Both bases have
/// orthonormal columns. The expression basis puts `landmark_energy` of every
/// column's squared norm on the landmark x/y coordinates (as a scaled
/// orthonormal block) so that frontal landmark fits are well conditioned; the
/// remaining energy is a smooth field over the rest of the mesh.
MorphableModel generate_synthetic_model(const SyntheticModelOptions& options);

/// Convenience overload matching the CLI knobs.
MorphableModel generate_synthetic_model(std::uint64_t seed, int vertex_count,
                                        int identity_dim = kDefaultIdentityDim);

/// Triangles of the near-square grid used by the synthetic mesh.
std::vector<std::array<int, 3>> synthetic_grid_faces(int vertex_count);

/// Normalized 68-point frontal face template (x right, y up, roughly in [-1, 1]).
LandmarkMatrix2 face_template_2d();

}  // namespace facerig
