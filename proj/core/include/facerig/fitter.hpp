#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "facerig/model.hpp"

namespace facerig {

/// Weak-perspective camera: image = scale * rotation.topRows<2>() * X + translation.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  double scale = 1.0;

  static Pose identity() { return {}; }
  /// Checks orthonormality and det = +1 (to 1e-8) and scale > 0.
  void validate() const;
};

/// Geodesic angle between two rotations, in radians.
double rotation_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b);

struct FitConfig {
  int max_iters = 20;
  double tol = 1e-8;
  /// Tikhonov weight on gamma. Unset means 1e-4 * (observed face width)^2,
  /// which keeps the fit invariant to the image scale.
  std::optional<double> reg_lambda;
};

struct FitResult {
  ExpressionParams gamma;
  Pose pose;
  /// Mean landmark distance of the returned (gamma, pose).
  double residual = 0.0;
  int iterations = 0;
  /// Residual after each accepted iteration; non-increasing.
  std::vector<double> residual_history;
};

LandmarkSet2D project_weak_perspective(const LandmarkSet3D& points, const Pose& pose);

/// Mean Euclidean distance over the 68 landmarks.
double landmark_loss(const LandmarkSet2D& predicted, const LandmarkSet2D& observed);

/// Horizontal extent of a landmark set; the geometry scale used by the default regularizer.
double face_width(const LandmarkSet2D& observed);

/// Weak-perspective similarity aligning 3D landmarks to 2D observations.
///
/// Solves the unconstrained 2x3 linear map on centered points, projects it to
/// the nearest pair of orthonormal rows, then picks the scale that is optimal
/// for that rotation. Throws DegenerateGeometry when the 3D points span less
/// than a plane or the observations collapse.
Pose fit_pose(const LandmarkSet3D& model_landmarks, const LandmarkSet2D& observed);

/// Closed-form expression coefficients for a fixed pose (ridge least squares).
/// Throws IllConditioned when reg_lambda == 0 and the normal matrix is singular.
ExpressionParams fit_expression(const MorphableModel& model, const IdentityParams& beta, const Pose& pose,
                                const LandmarkSet2D& observed, double reg_lambda);

/// Alternating pose / expression fit starting from gamma = 0.
FitResult fit(const MorphableModel& model, const IdentityParams& beta, const LandmarkSet2D& observed,
              const FitConfig& config = {});

/// Fits every frame independently. Results are in input order regardless of `threads`.
std::vector<FitResult> fit_batch(const MorphableModel& model, const IdentityParams& beta,
                                 std::span<const LandmarkSet2D> frames, const FitConfig& config = {},
                                 unsigned threads = 1);

/// Model landmarks for given coefficients without building the full mesh.
LandmarkSet3D model_landmarks(const MorphableModel& model, const IdentityParams& beta,
                              const ExpressionParams& gamma);

}  // namespace facerig
