#include "facerig/fitter.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "facerig/errors.hpp"

namespace facerig {

void Pose::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ContractViolation("pose scale must be positive and finite");
  }
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-8)) throw ContractViolation("pose rotation is not orthonormal");
  if (!(std::abs(rotation.determinant() - 1.0) <= 1e-8)) {
    throw ContractViolation("pose rotation has determinant != +1");
  }
  if (!translation.allFinite()) throw ContractViolation("pose translation is not finite");
}

double rotation_distance(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  const Eigen::Matrix3d rel = a.transpose() * b;
  // atan2 form stays accurate for tiny angles, unlike acos((tr - 1) / 2).
  const Eigen::Vector3d axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (rel.trace() - 1.0));
}

LandmarkSet2D project_weak_perspective(const LandmarkSet3D& points, const Pose& pose) {
  LandmarkSet2D out;
  const Eigen::Matrix<double, 2, 3> proj = pose.scale * pose.rotation.topRows<2>();
  out.points = points.points * proj.transpose();
  out.points.rowwise() += pose.translation.transpose();
  return out;
}

double landmark_loss(const LandmarkSet2D& predicted, const LandmarkSet2D& observed) {
  return (predicted.points - observed.points).rowwise().norm().sum() / kLandmarkCount;
}

double face_width(const LandmarkSet2D& observed) {
  return observed.points.col(0).maxCoeff() - observed.points.col(0).minCoeff();
}

Pose fit_pose(const LandmarkSet3D& model_landmarks, const LandmarkSet2D& observed) {
  const Eigen::RowVector3d mean3 = model_landmarks.points.colwise().mean();
  const Eigen::RowVector2d mean2 = observed.points.colwise().mean();
  const LandmarkMatrix3 xc = model_landmarks.points.rowwise() - mean3;
  const LandmarkMatrix2 yc = observed.points.rowwise() - mean2;

  const Eigen::Matrix3d xtx = xc.transpose() * xc;
  Eigen::JacobiSVD<Eigen::Matrix3d> xsvd(xtx, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = xsvd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw DegenerateGeometry("3D landmark configuration is collinear or coincident");
  }
  // Pseudo-inverse keeps planar configurations usable.
  Eigen::Vector3d inv = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    if (sv(i) > 1e-12 * sv(0)) inv(i) = 1.0 / sv(i);
  }
  const Eigen::Matrix3d xtx_pinv = xsvd.matrixV() * inv.asDiagonal() * xsvd.matrixU().transpose();
  const Eigen::Matrix<double, 2, 3> linear = yc.transpose() * xc * xtx_pinv;

  Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> asvd(linear, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!(asvd.singularValues()(1) > 0.0)) {
    throw DegenerateGeometry("observed landmarks do not span two image dimensions");
  }
  const Eigen::Matrix<double, 2, 3> rows = asvd.matrixU() * asvd.matrixV().leftCols<2>().transpose();

  const LandmarkMatrix2 rotated = xc * rows.transpose();
  const double denom = rotated.squaredNorm();
  const double scale = (rotated.array() * yc.array()).sum() / denom;
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw DegenerateGeometry("landmark alignment produced a non-positive scale");
  }

  Pose pose;
  pose.rotation.row(0) = rows.row(0);
  pose.rotation.row(1) = rows.row(1);
  pose.rotation.row(2) = rows.row(0).cross(rows.row(1));
  pose.scale = scale;
  pose.translation = (mean2 - scale * mean3 * rows.transpose()).transpose();
  return pose;
}

LandmarkSet3D model_landmarks(const MorphableModel& model, const IdentityParams& beta,
                              const ExpressionParams& gamma) {
  if (beta.values.size() != model.identity_dim()) {
    throw ContractViolation("identity params have length " + std::to_string(beta.values.size()) +
                            ", model identity dimension is " + std::to_string(model.identity_dim()));
  }
  if (gamma.values.size() != kExpressionDim) {
    throw ContractViolation("expression params have length " + std::to_string(gamma.values.size()) +
                            ", expected 64");
  }
  Eigen::VectorXd flat = model.landmark_id_basis() * beta.values + model.landmark_expr_basis() * gamma.values;
  LandmarkSet3D out;
  out.points = model.landmark_mean() + Eigen::Map<const Eigen::Matrix<double, kLandmarkCount, 3, Eigen::RowMajor>>(flat.data());
  return out;
}

ExpressionParams fit_expression(const MorphableModel& model, const IdentityParams& beta, const Pose& pose,
                                const LandmarkSet2D& observed, double reg_lambda) {
  pose.validate();
  if (!(reg_lambda >= 0.0) || !std::isfinite(reg_lambda)) {
    throw ContractViolation("reg_lambda must be a finite nonnegative number");
  }
  const LandmarkSet3D neutral = model_landmarks(model, beta, ExpressionParams::zero());
  const LandmarkSet2D base = project_weak_perspective(neutral, pose);

  const Eigen::Matrix<double, 2, 3> proj = pose.scale * pose.rotation.topRows<2>();
  const Eigen::MatrixXd& lexp = model.landmark_expr_basis();
  Eigen::MatrixXd design(2 * kLandmarkCount, kExpressionDim);
  Eigen::VectorXd rhs(2 * kLandmarkCount);
  for (int n = 0; n < kLandmarkCount; ++n) {
    design.middleRows<2>(2 * n).noalias() = proj * lexp.middleRows<3>(3 * n);
    rhs.segment<2>(2 * n) = (observed.points.row(n) - base.points.row(n)).transpose();
  }

  Eigen::MatrixXd normal = design.transpose() * design;
  normal.diagonal().array() += reg_lambda;
  const Eigen::VectorXd atb = design.transpose() * rhs;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-13)) {
    throw IllConditioned("expression normal matrix is singular; use reg_lambda > 0");
  }
  ExpressionParams gamma;
  gamma.values = ldlt.solve(atb);
  return gamma;
}

namespace {

double ridge_objective(const MorphableModel& model, const IdentityParams& beta, const ExpressionParams& gamma,
                       const Pose& pose, const LandmarkSet2D& observed, double lambda) {
  const LandmarkSet2D pred = project_weak_perspective(model_landmarks(model, beta, gamma), pose);
  return (pred.points - observed.points).squaredNorm() + lambda * gamma.values.squaredNorm();
}

// One damped Gauss-Newton step on the joint (rotation, scale, translation,
// gamma) ridge objective. Rotation is updated on the left by an exact
// axis-angle increment so it stays in SO(3). Returns false when no damping
// level lowers the objective.
bool joint_refine(const MorphableModel& model, const IdentityParams& beta, const LandmarkSet2D& observed,
                  double lambda, ExpressionParams& gamma, Pose& pose) {
  constexpr int kParams = 6 + kExpressionDim;
  const LandmarkSet3D lm = model_landmarks(model, beta, gamma);
  const LandmarkMatrix3 rotated = lm.points * pose.rotation.transpose();
  const Eigen::Matrix<double, 2, 3> proj = pose.scale * pose.rotation.topRows<2>();
  const Eigen::MatrixXd& lexp = model.landmark_expr_basis();

  Eigen::MatrixXd jac(2 * kLandmarkCount, kParams);
  Eigen::VectorXd res(2 * kLandmarkCount);
  for (int n = 0; n < kLandmarkCount; ++n) {
    const Eigen::Vector3d y = rotated.row(n).transpose();
    auto block = jac.middleRows<2>(2 * n);
    // d(P * (w x y)) / dw = -P [y]x
    block(0, 0) = 0.0;
    block(0, 1) = pose.scale * y.z();
    block(0, 2) = -pose.scale * y.y();
    block(1, 0) = -pose.scale * y.z();
    block(1, 1) = 0.0;
    block(1, 2) = pose.scale * y.x();
    block(0, 3) = y.x();
    block(1, 3) = y.y();
    block.middleCols<2>(4).setIdentity();
    block.rightCols<kExpressionDim>().noalias() = proj * lexp.middleRows<3>(3 * n);
    res.segment<2>(2 * n) =
        (pose.scale * y.head<2>() + pose.translation - observed.points.row(n).transpose());
  }
  Eigen::MatrixXd normal = jac.transpose() * jac;
  normal.diagonal().tail<kExpressionDim>().array() += lambda;
  Eigen::VectorXd grad = jac.transpose() * res;
  grad.tail<kExpressionDim>() += lambda * gamma.values;

  const double current = res.squaredNorm() + lambda * gamma.values.squaredNorm();
  const double diag_scale = normal.diagonal().maxCoeff();
  for (double damping : {0.0, 1e-9, 1e-6, 1e-3}) {
    Eigen::MatrixXd damped = normal;
    damped.diagonal().array() += damping * diag_scale;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
    if (ldlt.info() != Eigen::Success) continue;
    const Eigen::VectorXd step = -ldlt.solve(grad);
    if (!step.allFinite()) continue;

    Pose candidate = pose;
    const Eigen::Vector3d w = step.head<3>();
    if (w.norm() > 0.0) {
      candidate.rotation = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix() * pose.rotation;
    }
    candidate.scale = pose.scale + step(3);
    candidate.translation = pose.translation + step.segment<2>(4);
    if (!(candidate.scale > 0.0)) continue;
    ExpressionParams cand_gamma;
    cand_gamma.values = gamma.values + step.tail<kExpressionDim>();
    if (ridge_objective(model, beta, cand_gamma, candidate, observed, lambda) < current) {
      pose = candidate;
      gamma = std::move(cand_gamma);
      return true;
    }
  }
  return false;
}

}  // namespace

FitResult fit(const MorphableModel& model, const IdentityParams& beta, const LandmarkSet2D& observed,
              const FitConfig& config) {
  if (config.max_iters < 1) throw ContractViolation("max_iters must be positive");
  if (!(config.tol > 0.0)) throw ContractViolation("tol must be positive");
  if (!observed.points.allFinite()) throw ContractViolation("observed landmarks contain non-finite values");

  const double width = face_width(observed);
  const double lambda = config.reg_lambda.value_or(1e-4 * width * width);
  const double floor = 1e-14 * std::max(width, 1.0);

  FitResult best;
  ExpressionParams gamma = ExpressionParams::zero();
  double prev = std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.max_iters; ++it) {
    Pose pose = fit_pose(model_landmarks(model, beta, gamma), observed);
    ExpressionParams next = fit_expression(model, beta, pose, observed, lambda);
    joint_refine(model, beta, observed, lambda, next, pose);
    const double residual = landmark_loss(project_weak_perspective(model_landmarks(model, beta, next), pose), observed);
    if (residual > prev) break;  // keep the last accepted state

    best.gamma = next;
    best.pose = pose;
    best.residual = residual;
    best.iterations = it + 1;
    best.residual_history.push_back(residual);
    gamma = next;

    if (residual <= floor) break;
    if (std::isfinite(prev) && prev - residual <= config.tol * prev) break;
    prev = residual;
  }
  return best;
}

std::vector<FitResult> fit_batch(const MorphableModel& model, const IdentityParams& beta,
                                 std::span<const LandmarkSet2D> frames, const FitConfig& config,
                                 unsigned threads) {
  std::vector<FitResult> results(frames.size());
  if (threads <= 1 || frames.size() < 2) {
    for (std::size_t i = 0; i < frames.size(); ++i) results[i] = fit(model, beta, frames[i], config);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < frames.size(); i = next++) {
      try {
        results[i] = fit(model, beta, frames[i], config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, frames.size()); ++t) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
  return results;
}

}  // namespace facerig
