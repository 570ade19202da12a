#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "vrfear/skeleton.hpp"

using namespace vrfear;

namespace {

KeypointFrame zero_frame() {
  KeypointFrame f;
  for (auto& j : f.joints) j = Joint{0, 0, 0};
  return f;
}

}  // namespace

TEST_CASE("flatten examples", "[skeleton]") {
  auto f = zero_frame();
  f.joints[0] = Joint{1, 2, 3};
  f.joints[24] = Joint{7, 8, 9};
  const auto v = flatten(f);
  CHECK(v[0] == 1);
  CHECK(v[1] == 2);
  CHECK(v[2] == 3);
  CHECK(v[3] == 0);
  CHECK(v[74] == 9);

  const auto z = flatten(zero_frame());
  CHECK(std::all_of(z.begin(), z.end(), [](double x) { return x == 0.0; }));

  auto missing = zero_frame();
  missing.joints[12].reset();
  CHECK_THROWS_AS(flatten(missing), Error);
}

TEST_CASE("points on a line give one component", "[skeleton]") {
  Rng rng(1);
  std::vector<double> dir(75), base(75);
  for (double& d : dir) d = rng.normal();
  for (double& b : base) b = rng.normal();
  RowMatrix rows(50, 75);
  for (std::size_t r = 0; r < 50; ++r) {
    const double t = rng.normal();
    for (std::size_t c = 0; c < 75; ++c) rows(r, c) = base[c] + t * dir[c];
  }
  const auto m = fit_pca(rows);
  CHECK(m.k() == 1);
  CHECK(m.retained_ratio == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("equal eigenvalues force 74 of 75 components", "[skeleton]") {
  Rng rng(2);
  const auto m = fit_pca(oracle::isotropic_rows(75, rng));
  CHECK(m.k() == 74);
  CHECK(m.variance_target_components == 74);
  CHECK(m.retained_ratio == Catch::Approx(74.0 / 75.0).epsilon(1e-9));
}

TEST_CASE("rank-10 data agrees with an independent eigensolver", "[skeleton]") {
  Rng rng(3);
  const auto rows = oracle::rank_k_rows(400, 75, 10, rng);
  const auto m = fit_pca(rows);
  CHECK(m.k() == 10);
  CHECK(m.retained_ratio >= 0.999999);
  CHECK(oracle::orthonormality_error(m.components) < 1e-8);
  const auto ref = oracle::covariance_eigenvalues(rows);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(m.explained_variance[i] == Catch::Approx(ref(static_cast<Eigen::Index>(i))).epsilon(1e-9));
  }
  // Projecting then reconstructing loses nothing on rank-10 data.
  const auto back = reconstruct(m, apply_pca(m, rows));
  for (std::size_t i = 0; i < rows.data.size(); ++i) REQUIRE(back.data[i] == Catch::Approx(rows.data[i]).margin(1e-8));
}

TEST_CASE("jacobi matches Eigen on random symmetric matrices", "[skeleton]") {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 5 + 7 * trial;
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    a = (a + a.transpose()).eval();
    RowMatrix rm(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) rm(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = a(i, j);
    const auto eig = jacobi_eigen(rm);
    const Eigen::VectorXd ref = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().reverse();
    for (int i = 0; i < n; ++i) CHECK(eig.values[static_cast<std::size_t>(i)] == Catch::Approx(ref(i)).margin(1e-9));
    CHECK(oracle::orthonormality_error(eig.vectors) < 1e-10);
  }
}

TEST_CASE("projection of mean and mean plus component", "[skeleton]") {
  Rng rng(5);
  const auto rows = oracle::rank_k_rows(100, 75, 6, rng);
  const auto m = fit_pca(rows);
  RowMatrix probe(2, 75);
  for (std::size_t c = 0; c < 75; ++c) {
    probe(0, c) = m.mean[c];
    probe(1, c) = m.mean[c] + 2.5 * m.components(1, c);
  }
  const auto p = apply_pca(m, probe);
  for (std::size_t i = 0; i < m.k(); ++i) {
    CHECK(p(0, i) == Catch::Approx(0.0).margin(1e-10));
    CHECK(p(1, i) == Catch::Approx(i == 1 ? 2.5 : 0.0).margin(1e-10));
  }
}

TEST_CASE("PCA invariants on random data", "[skeleton]") {
  Rng rng(6);
  RowMatrix rows(120, 75);
  for (std::size_t r = 0; r < rows.rows; ++r)
    for (std::size_t c = 0; c < rows.cols; ++c) rows(r, c) = rng.normal() * (1.0 + static_cast<double>(c % 7));
  const auto m = fit_pca(rows, PcaOptions{0.9, std::nullopt});
  CHECK(oracle::orthonormality_error(m.components) < 1e-8);
  CHECK(std::is_sorted(m.explained_variance.rbegin(), m.explained_variance.rend()));
  double kept = 0.0;
  for (double v : m.explained_variance) kept += v;
  CHECK(m.retained_ratio == Catch::Approx(kept / m.total_variance));
  CHECK(m.retained_ratio >= 0.9);

  double trace = 0.0;
  for (double v : oracle::covariance_eigenvalues(rows)) trace += std::max(v, 0.0);
  CHECK(m.total_variance == Catch::Approx(trace).epsilon(1e-9));

  const auto fixed = fit_pca(rows, PcaOptions{0.9, std::size_t{33}});
  CHECK(fixed.k() == 33);
  CHECK(fixed.variance_target_components == m.k());
}

TEST_CASE("component signs are canonical", "[skeleton]") {
  Rng rng(7);
  const auto m = fit_pca(oracle::rank_k_rows(60, 75, 4, rng));
  for (std::size_t i = 0; i < m.k(); ++i) {
    const auto row = m.components.row(i);
    const auto it = std::max_element(row.begin(), row.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    CHECK(*it > 0.0);
  }
}

TEST_CASE("PCA errors", "[skeleton]") {
  CHECK_THROWS_AS(fit_pca(RowMatrix(1, 75)), Error);
  CHECK_THROWS_AS(fit_pca(RowMatrix(5, 75)), Error);  // zero variance
  Rng rng(8);
  const auto rows = oracle::rank_k_rows(20, 75, 3, rng);
  CHECK_THROWS_AS(fit_pca(rows, PcaOptions{0.0, std::nullopt}), Error);
  CHECK_THROWS_AS(fit_pca(rows, PcaOptions{1.5, std::nullopt}), Error);
  CHECK_THROWS_AS(apply_pca(fit_pca(rows), RowMatrix(2, 74)), Error);
}

TEST_CASE("PCA model JSON round trip", "[skeleton]") {
  Rng rng(9);
  const auto m = fit_pca(oracle::rank_k_rows(40, 75, 5, rng));
  const auto back = pca_from_json(nlohmann::json::parse(pca_to_json(m).dump()));
  CHECK(back.mean == m.mean);
  CHECK(back.components.data == m.components.data);
  CHECK(back.explained_variance == m.explained_variance);
  CHECK(back.retained_ratio == m.retained_ratio);
  CHECK(back.variance_target_components == m.variance_target_components);
}
