#include "facerig/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <unordered_set>

#include <Eigen/QR>

#include "facerig/errors.hpp"

namespace facerig {

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& basis, const std::vector<int>& indices) {
  Eigen::MatrixXd out(3 * static_cast<Eigen::Index>(indices.size()), basis.cols());
  for (std::size_t n = 0; n < indices.size(); ++n) {
    out.middleRows(3 * static_cast<Eigen::Index>(n), 3) = basis.middleRows(3 * indices[n], 3);
  }
  return out;
}

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& raw) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  return qr.householderQ() * Eigen::MatrixXd::Identity(raw.rows(), raw.cols());
}

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
  }
  return m;
}

struct Grid {
  int cols = 0;
  int rows = 0;
};

Grid grid_for(int vertex_count) {
  Grid g;
  g.cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(vertex_count))));
  g.rows = (vertex_count + g.cols - 1) / g.cols;
  return g;
}

Eigen::Vector2d grid_uv(const Grid& g, int i) {
  const int r = i / g.cols;
  const int c = i % g.cols;
  return {-1.0 + 2.0 * c / (g.cols - 1), 1.0 - 2.0 * r / (g.rows - 1)};
}

// Semi-axes of the ellipsoid patch used as the synthetic mean face.
constexpr double kHalfWidth = 0.5;
constexpr double kHalfHeight = 0.6;
constexpr double kDepth = 0.35;

}  // namespace

MorphableModel MorphableModel::make(Eigen::VectorXd mean_shape, Eigen::MatrixXd id_basis,
                                    Eigen::MatrixXd expr_basis, std::vector<int> landmark_indices) {
  const auto n = mean_shape.size();
  if (n == 0 || n % 3 != 0) {
    throw ContractViolation("mean_shape length " + std::to_string(n) + " is not a positive multiple of 3");
  }
  const int vertex_count = static_cast<int>(n / 3);
  if (id_basis.rows() != n) {
    throw ContractViolation("id_basis has " + std::to_string(id_basis.rows()) + " rows, expected 3V = " +
                            std::to_string(n));
  }
  if (id_basis.cols() < 1) throw ContractViolation("id_basis needs at least one column");
  if (expr_basis.rows() != n) {
    throw ContractViolation("expr_basis has " + std::to_string(expr_basis.rows()) + " rows, expected 3V = " +
                            std::to_string(n));
  }
  if (expr_basis.cols() != kExpressionDim) {
    throw ContractViolation("expr_basis has " + std::to_string(expr_basis.cols()) + " columns, expected " +
                            std::to_string(kExpressionDim));
  }
  if (landmark_indices.size() != kLandmarkCount) {
    throw ContractViolation("landmark_indices has " + std::to_string(landmark_indices.size()) +
                            " entries, expected 68");
  }
  std::unordered_set<int> seen;
  for (int idx : landmark_indices) {
    if (idx < 0 || idx >= vertex_count) {
      throw ContractViolation("landmark index " + std::to_string(idx) + " out of range for V = " +
                              std::to_string(vertex_count));
    }
    if (!seen.insert(idx).second) throw ContractViolation("duplicate landmark index " + std::to_string(idx));
  }

  MorphableModel m;
  m.mean_shape_ = std::move(mean_shape);
  m.id_basis_ = std::move(id_basis);
  m.expr_basis_ = std::move(expr_basis);
  m.landmark_indices_ = std::move(landmark_indices);
  m.landmark_expr_basis_ = gather_rows(m.expr_basis_, m.landmark_indices_);
  m.landmark_id_basis_ = gather_rows(m.id_basis_, m.landmark_indices_);
  return m;
}

LandmarkMatrix3 MorphableModel::landmark_mean() const {
  LandmarkMatrix3 out;
  for (int n = 0; n < kLandmarkCount; ++n) {
    out.row(n) = mean_shape_.segment<3>(3 * landmark_indices_[n]).transpose();
  }
  return out;
}

VertexPositions synthesize_shape(const MorphableModel& model, const IdentityParams& beta,
                                 const ExpressionParams& gamma) {
  if (beta.values.size() != model.identity_dim()) {
    throw ContractViolation("identity params have length " + std::to_string(beta.values.size()) +
                            ", model identity dimension is " + std::to_string(model.identity_dim()));
  }
  if (gamma.values.size() != kExpressionDim) {
    throw ContractViolation("expression params have length " + std::to_string(gamma.values.size()) +
                            ", expected 64");
  }
  VertexPositions out;
  out.positions = model.mean_shape();
  out.positions.noalias() += model.id_basis() * beta.values;
  out.positions.noalias() += model.expr_basis() * gamma.values;
  return out;
}

LandmarkSet3D gather_landmarks(const VertexPositions& vertices, const std::vector<int>& indices) {
  if (indices.size() != kLandmarkCount) {
    throw ContractViolation("expected 68 landmark indices, got " + std::to_string(indices.size()));
  }
  const int v = vertices.vertex_count();
  LandmarkSet3D out;
  for (int n = 0; n < kLandmarkCount; ++n) {
    const int idx = indices[n];
    if (idx < 0 || idx >= v) {
      throw ContractViolation("landmark index " + std::to_string(idx) + " out of range for " +
                              std::to_string(v) + " vertices");
    }
    out.points.row(n) = vertices.positions.segment<3>(3 * idx).transpose();
  }
  return out;
}

LandmarkSet3D select_landmarks(const VertexPositions& vertices, const MorphableModel& model) {
  if (vertices.positions.size() != model.mean_shape().size()) {
    throw ContractViolation("vertex buffer length " + std::to_string(vertices.positions.size()) +
                            " does not match model 3V = " + std::to_string(model.mean_shape().size()));
  }
  return gather_landmarks(vertices, model.landmark_indices());
}

LandmarkMatrix2 face_template_2d() {
  using std::numbers::pi;
  LandmarkMatrix2 t;
  int n = 0;
  auto put = [&](double u, double v) { t.row(n++) << u, v; };

  for (int i = 0; i <= 16; ++i) {  // jaw
    const double a = pi + pi * i / 16.0;
    put(0.85 * std::cos(a), 0.1 + 0.85 * std::sin(a));
  }
  for (int side = 0; side < 2; ++side) {  // brows
    const double u0 = side == 0 ? -0.7 : 0.15;
    for (int j = 0; j < 5; ++j) put(u0 + 0.55 * j / 4.0, 0.45 + 0.06 * std::sin(pi * j / 4.0));
  }
  for (int j = 0; j < 4; ++j) put(0.0, 0.3 - 0.12 * j);  // nose bridge
  for (int j = 0; j < 5; ++j) put(-0.15 + 0.075 * j, -0.14 - 0.02 * (2 - std::abs(j - 2)));
  const double eye_angles[6] = {pi, 2 * pi / 3, pi / 3, 0.0, -pi / 3, -2 * pi / 3};
  for (double cx : {-0.38, 0.38}) {
    for (double a : eye_angles) put(cx + 0.14 * std::cos(a), 0.25 + 0.06 * std::sin(a));
  }
  for (int j = 0; j < 12; ++j) {  // outer lip
    const double a = pi - 2 * pi * j / 12.0;
    put(0.3 * std::cos(a), -0.42 + 0.13 * std::sin(a));
  }
  for (int j = 0; j < 8; ++j) {  // inner lip
    const double a = pi - 2 * pi * j / 8.0;
    put(0.2 * std::cos(a), -0.42 + 0.05 * std::sin(a));
  }
  return t;
}

std::vector<std::array<int, 3>> synthetic_grid_faces(int vertex_count) {
  const Grid g = grid_for(vertex_count);
  std::vector<std::array<int, 3>> faces;
  for (int r = 0; r + 1 < g.rows; ++r) {
    for (int c = 0; c + 1 < g.cols; ++c) {
      const int a = r * g.cols + c;
      const int b = a + 1;
      const int d = a + g.cols;
      const int e = d + 1;
      if (e >= vertex_count) continue;
      faces.push_back({a, d, b});
      faces.push_back({b, d, e});
    }
  }
  return faces;
}

MorphableModel generate_synthetic_model(const SyntheticModelOptions& options) {
  const int vertex_count = options.vertex_count;
  if (vertex_count < kLandmarkCount) {
    throw InvalidSize("vertex_count " + std::to_string(vertex_count) + " is below the 68 landmark minimum");
  }
  if (options.identity_dim < 1 || options.identity_dim > 3 * vertex_count) {
    throw InvalidSize("identity_dim " + std::to_string(options.identity_dim) + " must lie in [1, 3V]");
  }
  if (!(options.landmark_energy > 0.0 && options.landmark_energy < 1.0)) {
    throw InvalidSize("landmark_energy must lie in (0, 1)");
  }
  std::mt19937_64 rng(options.seed);
  const Grid grid = grid_for(vertex_count);
  const Eigen::Index n3 = 3 * static_cast<Eigen::Index>(vertex_count);

  Eigen::VectorXd mean(n3);
  std::vector<Eigen::Vector2d> uv(vertex_count);
  for (int i = 0; i < vertex_count; ++i) {
    uv[i] = grid_uv(grid, i);
    const double rr = uv[i].squaredNorm();
    mean.segment<3>(3 * i) << kHalfWidth * uv[i].x(), kHalfHeight * uv[i].y(),
        kDepth * std::sqrt(std::max(0.0, 1.0 - 0.45 * rr));
  }

  // Snap the template to distinct grid vertices, nearest unused first.
  const LandmarkMatrix2 tmpl = face_template_2d();
  std::vector<int> landmarks;
  std::vector<bool> used(vertex_count, false);
  for (int n = 0; n < kLandmarkCount; ++n) {
    const Eigen::Vector2d target = tmpl.row(n).transpose();
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < vertex_count; ++i) {
      if (used[i]) continue;
      const double d = (uv[i] - target).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    used[best] = true;
    landmarks.push_back(best);
  }

  Eigen::MatrixXd id_basis = orthonormal_columns(gaussian_matrix(rng, n3, options.identity_dim));

  // Expression basis: landmark x/y rows get a scaled orthonormal block, every
  // other coordinate gets a scaled orthonormal smooth field. The two blocks
  // stack into exactly orthonormal columns.
  const Eigen::Index lm_rows = 2 * kLandmarkCount;
  const Eigen::MatrixXd lm_block = orthonormal_columns(gaussian_matrix(rng, lm_rows, kExpressionDim));

  std::vector<bool> is_lm_xy(static_cast<std::size_t>(n3), false);
  for (int idx : landmarks) {
    is_lm_xy[3 * idx] = true;
    is_lm_xy[3 * idx + 1] = true;
  }
  std::vector<Eigen::Index> rest_rows;
  for (Eigen::Index r = 0; r < n3; ++r) {
    if (!is_lm_xy[static_cast<std::size_t>(r)]) rest_rows.push_back(r);
  }

  const Eigen::MatrixXd controls = gaussian_matrix(rng, 3 * kLandmarkCount, kExpressionDim);
  const double sigma2 = 2.0 * 0.2 * 0.2;
  Eigen::MatrixXd weights(vertex_count, kLandmarkCount);
  for (int i = 0; i < vertex_count; ++i) {
    for (int l = 0; l < kLandmarkCount; ++l) {
      weights(i, l) = std::exp(-(uv[i] - uv[landmarks[l]]).squaredNorm() / sigma2);
    }
    weights.row(i) /= weights.row(i).sum();
  }
  Eigen::MatrixXd smooth(static_cast<Eigen::Index>(rest_rows.size()), kExpressionDim);
  for (std::size_t k = 0; k < rest_rows.size(); ++k) {
    const Eigen::Index r = rest_rows[k];
    const int vtx = static_cast<int>(r / 3);
    const int dim = static_cast<int>(r % 3);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(kExpressionDim);
    for (int l = 0; l < kLandmarkCount; ++l) acc += weights(vtx, l) * controls.row(3 * l + dim);
    smooth.row(static_cast<Eigen::Index>(k)) = acc;
  }
  const Eigen::MatrixXd rest_block = orthonormal_columns(smooth);

  const double lm_scale = std::sqrt(options.landmark_energy);
  const double rest_scale = std::sqrt(1.0 - options.landmark_energy);
  Eigen::MatrixXd expr_basis(n3, kExpressionDim);
  for (int n = 0; n < kLandmarkCount; ++n) {
    expr_basis.row(3 * landmarks[n]) = lm_scale * lm_block.row(2 * n);
    expr_basis.row(3 * landmarks[n] + 1) = lm_scale * lm_block.row(2 * n + 1);
  }
  for (std::size_t k = 0; k < rest_rows.size(); ++k) {
    expr_basis.row(rest_rows[k]) = rest_scale * rest_block.row(static_cast<Eigen::Index>(k));
  }

  return MorphableModel::make(std::move(mean), std::move(id_basis), std::move(expr_basis),
                              std::move(landmarks));
}

MorphableModel generate_synthetic_model(std::uint64_t seed, int vertex_count, int identity_dim) {
  SyntheticModelOptions opts;
  opts.seed = seed;
  opts.vertex_count = vertex_count;
  opts.identity_dim = identity_dim;
  return generate_synthetic_model(opts);
}

}  // namespace facerig
