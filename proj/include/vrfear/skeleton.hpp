#pragma once

// Skeleton feature reduction: flatten 25 joints to a 75-vector and project onto
// principal components of the centered pose covariance.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/core.hpp"
#include "vrfear/error.hpp"
#include "vrfear/ingest.hpp"

namespace vrfear {

// Flattened pose in (x0, y0, z0, x1, ..., z24) order.
using Skeleton = std::array<double, kSkeletonDims>;

inline Skeleton flatten(const KeypointFrame& frame) {
  Skeleton out{};
  for (int j = 0; j < kJointCount; ++j) {
    const auto& joint = frame.joints[j];
    if (!joint) {
      throw Error("skeleton-features", "missing_joint",
                  "joint " + std::to_string(j) + " missing at t=" + std::to_string(frame.timestamp));
    }
    out[3 * j] = joint->x;
    out[3 * j + 1] = joint->y;
    out[3 * j + 2] = joint->z;
  }
  return out;
}

// Dense row-major matrix used for the PCA inputs and outputs.
struct RowMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct SymmetricEigen {
  std::vector<double> values;  // nonincreasing
  RowMatrix vectors;           // row i is the unit eigenvector for values[i]
  int sweeps = 0;
};

// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Eigenvectors are
// sorted by decreasing eigenvalue and each is signed so that its
// largest-magnitude entry is positive.
inline SymmetricEigen jacobi_eigen(RowMatrix a, int max_sweeps = 100) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw Error("skeleton-features", "not_square", "jacobi_eigen needs a square matrix");
  RowMatrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.data) total += x * x;
  const double threshold = 1e-30 * std::max(total, 1e-300);

  SymmetricEigen result;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    result.sweeps = sweep;
    if (off <= threshold) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  result.values.resize(n);
  result.vectors = RowMatrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t col = order[r];
    result.values[r] = a(col, col);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, col)) > std::abs(v(arg, col))) arg = k;
    const double sign = v(arg, col) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) result.vectors(r, k) = sign * v(k, col);
  }
  return result;
}

struct PcaModel {
  static constexpr int kSchemaVersion = 1;

  std::vector<double> mean;                 // width d
  RowMatrix components;                     // k x d, orthonormal rows
  std::vector<double> explained_variance;   // k, nonincreasing
  double total_variance = 0.0;
  double retained_ratio = 0.0;
  std::size_t variance_target_components = 0;  // count the variance target alone would pick

  std::size_t dims() const { return mean.size(); }
  std::size_t k() const { return components.rows; }
};

struct PcaOptions {
  double variance_target = 0.98;
  // Keep exactly this many components instead of applying the variance target.
  std::optional<std::size_t> components;
};

inline RowMatrix sample_covariance(const RowMatrix& rows, std::vector<double>& mean) {
  const std::size_t n = rows.rows;
  const std::size_t d = rows.cols;
  mean.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += rows(r, c);
  for (double& m : mean) m /= static_cast<double>(n);
  RowMatrix cov(d, d);
  std::vector<double> centered(d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = rows(r, c) - mean[c];
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = centered[i];
      if (ci == 0.0) continue;
      double* out = &cov.data[i * d];
      for (std::size_t j = i; j < d; ++j) out[j] += ci * centered[j];
    }
  }
  const double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) *= scale;
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

// Smallest k whose leading eigenvalues reach `target` of the total variance.
inline std::size_t components_for_target(std::span<const double> eigenvalues, double target) {
  double total = 0.0;
  for (double v : eigenvalues) total += std::max(v, 0.0);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) {
    cumulative += std::max(eigenvalues[i], 0.0);
    // Relative slack absorbs summation rounding when the target is hit exactly.
    if (cumulative >= target * total * (1.0 - 1e-12)) return i + 1;
  }
  return eigenvalues.size();
}

inline PcaModel fit_pca(const RowMatrix& rows, const PcaOptions& options = {}) {
  if (rows.rows < 2) throw Error("skeleton-features", "too_few_rows", "PCA needs at least 2 rows");
  if (!(options.variance_target > 0.0) || options.variance_target > 1.0) {
    throw Error("skeleton-features", "invalid_target", "variance target must lie in (0, 1]");
  }
  PcaModel model;
  const RowMatrix cov = sample_covariance(rows, model.mean);
  const SymmetricEigen eig = jacobi_eigen(cov);
  double total = 0.0;
  for (double v : eig.values) total += std::max(v, 0.0);
  if (!(total > 0.0)) throw Error("skeleton-features", "zero_variance", "input rows have zero total variance");

  model.total_variance = total;
  model.variance_target_components = components_for_target(eig.values, options.variance_target);
  const std::size_t k = options.components.value_or(model.variance_target_components);
  if (k == 0 || k > rows.cols) {
    throw Error("skeleton-features", "invalid_components",
                "component count " + std::to_string(k) + " outside [1, " + std::to_string(rows.cols) + "]");
  }
  model.components = RowMatrix(k, rows.cols);
  model.explained_variance.resize(k);
  double kept = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    model.explained_variance[i] = std::max(eig.values[i], 0.0);
    kept += model.explained_variance[i];
    std::copy(eig.vectors.row(i).begin(), eig.vectors.row(i).end(), model.components.row(i).begin());
  }
  model.retained_ratio = std::min(1.0, kept / total);
  return model;
}

inline RowMatrix apply_pca(const PcaModel& model, const RowMatrix& rows) {
  if (rows.cols != model.dims()) {
    throw Error("skeleton-features", "width_mismatch",
                "row width " + std::to_string(rows.cols) + " != model width " + std::to_string(model.dims()));
  }
  const std::size_t k = model.k();
  RowMatrix out(rows.rows, k);
  std::vector<double> centered(rows.cols);
  for (std::size_t r = 0; r < rows.rows; ++r) {
    for (std::size_t c = 0; c < rows.cols; ++c) centered[c] = rows(r, c) - model.mean[c];
    for (std::size_t i = 0; i < k; ++i) {
      const auto comp = model.components.row(i);
      out(r, i) = std::inner_product(comp.begin(), comp.end(), centered.begin(), 0.0);
    }
  }
  return out;
}

// Maps projected coordinates back to the original space.
inline RowMatrix reconstruct(const PcaModel& model, const RowMatrix& projected) {
  if (projected.cols != model.k()) {
    throw Error("skeleton-features", "width_mismatch", "projected width does not match component count");
  }
  RowMatrix out(projected.rows, model.dims());
  for (std::size_t r = 0; r < projected.rows; ++r) {
    auto dst = out.row(r);
    std::copy(model.mean.begin(), model.mean.end(), dst.begin());
    for (std::size_t i = 0; i < model.k(); ++i) {
      const double w = projected(r, i);
      const auto comp = model.components.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += w * comp[c];
    }
  }
  return out;
}

inline RowMatrix skeleton_rows(std::span<const Skeleton> frames) {
  RowMatrix m(frames.size(), kSkeletonDims);
  for (std::size_t r = 0; r < frames.size(); ++r) std::copy(frames[r].begin(), frames[r].end(), m.row(r).begin());
  return m;
}

inline nlohmann::json pca_to_json(const PcaModel& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t i = 0; i < m.k(); ++i) {
    const auto row = m.components.row(i);
    comps.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"schema_version", PcaModel::kSchemaVersion},
          {"mean", m.mean},
          {"components", comps},
          {"explained_variance", m.explained_variance},
          {"total_variance", m.total_variance},
          {"retained_ratio", m.retained_ratio},
          {"variance_target_components", m.variance_target_components}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != PcaModel::kSchemaVersion) {
      throw Error("skeleton-features", "schema_version", "unsupported PCA schema_version");
    }
    PcaModel m;
    m.mean = j.at("mean").get<std::vector<double>>();
    const auto comps = j.at("components").get<std::vector<std::vector<double>>>();
    m.components = RowMatrix(comps.size(), m.mean.size());
    for (std::size_t i = 0; i < comps.size(); ++i) {
      if (comps[i].size() != m.mean.size()) {
        throw Error("skeleton-features", "invalid_model", "component width mismatch");
      }
      std::copy(comps[i].begin(), comps[i].end(), m.components.row(i).begin());
    }
    m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    m.total_variance = j.at("total_variance").get<double>();
    m.retained_ratio = j.at("retained_ratio").get<double>();
    m.variance_target_components = j.at("variance_target_components").get<std::size_t>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("skeleton-features", "invalid_model", std::string("PCA model: ") + e.what());
  }
}

}  // namespace vrfear
