#include "skpn/error.hpp"
#include "skpn/gradstats.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <Eigen/SVD>

#include <cmath>

using namespace skpn;

namespace {

// Eigenvalues of a symmetric 2x2 matrix by one Jacobi rotation, descending.
std::pair<double, double> jacobi_eigenvalues(double a, double b, double d) {
  if (b == 0.0) return {std::max(a, d), std::min(a, d)};
  const double theta = (d - a) / (2.0 * b);
  const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double e1 = a - t * b, e2 = d + t * b;
  return {std::max(e1, e2), std::min(e1, e2)};
}

Eigen::MatrixX2d random_g(std::mt19937_64& rng, int rows) {
  Eigen::MatrixX2d g(rows, 2);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int i = 0; i < rows; ++i) g(i, 0) = dist(rng), g(i, 1) = dist(rng);
  return g;
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("image_gradients examples") {
  const Image flat = Image::Constant(5, 6, 0.4);
  const auto [fx, fy] = image_gradients(flat);
  CHECK((fx == 0.0).all());
  CHECK((fy == 0.0).all());

  Image ramp(6, 7);
  for (int m = 0; m < 6; ++m)
    for (int n = 0; n < 7; ++n) ramp(m, n) = n;
  const auto [rx, ry] = image_gradients(ramp);
  for (int m = 0; m < 6; ++m)
    for (int n = 1; n < 6; ++n) CHECK(rx(m, n) == 1.0);
  CHECK((ry == 0.0).all());
  CHECK(rx(0, 0) == 0.5);  // replicated border halves the difference

  std::mt19937_64 rng(1);
  const Image img = testing::random_image(5, 5, rng);
  const auto [gx, gy] = image_gradients(img);
  for (int m = 0; m < 5; ++m)
    for (int n = 0; n < 5; ++n) {
      const double right = img(m, std::min(n + 1, 4)), left = img(m, std::max(n - 1, 0));
      const double down = img(std::min(m + 1, 4), n), up = img(std::max(m - 1, 0), n);
      CHECK(gx(m, n) == (right - left) / 2);
      CHECK(gy(m, n) == (down - up) / 2);
    }

  CHECK_THROWS_AS(image_gradients(Image::Zero(2, 5)), ShapeError);
}

TEST_CASE("structure_stats on rank-1 and zero G") {
  Eigen::MatrixX2d g = Eigen::MatrixX2d::Zero(121, 2);
  g.col(0).setOnes();
  const auto s = structure_stats(g, 11, StrengthNorm::kRaw);
  CHECK(s.lambda1 == 121.0);
  CHECK(s.lambda2 == 0.0);
  CHECK(s.coherence == 1.0);
  CHECK(s.strength == 121.0);
  CHECK(structure_stats(g, 11).strength == doctest::Approx(1.0).epsilon(1e-15));

  const auto z = structure_stats(Eigen::MatrixX2d::Zero(121, 2).eval(), 11);
  CHECK(z.strength == 0.0);
  CHECK(z.coherence == 0.0);
}

TEST_CASE("closed-form eigenvalues match independent solvers") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::MatrixX2d g = random_g(rng, 9);
    double a = 0, b = 0, d = 0;
    for (int i = 0; i < 9; ++i) {
      a += g(i, 0) * g(i, 0);
      b += g(i, 0) * g(i, 1);
      d += g(i, 1) * g(i, 1);
    }
    const auto [e1, e2] = jacobi_eigenvalues(a, b, d);
    const auto s = structure_stats(g, 3, StrengthNorm::kRaw);
    CHECK(rel(s.lambda1, e1) < 1e-10);
    CHECK(rel(s.lambda2, e2) < 1e-10);

    const Eigen::JacobiSVD<Eigen::MatrixX2d> svd(g);
    const auto sv = svd.singularValues();
    CHECK(rel(s.lambda1, sv(0) * sv(0)) < 1e-10);
    CHECK(rel(s.lambda2, sv(1) * sv(1)) < 1e-10);

    CHECK(rel(s.lambda1 + s.lambda2, a + d) < 1e-9);
    CHECK(rel(s.lambda1 * s.lambda2, a * d - b * b) < 1e-9);
    CHECK(s.lambda1 >= s.lambda2);
    CHECK(s.coherence >= 0.0);
    CHECK(s.coherence <= 1.0);
  }
}

TEST_CASE("stats_map of a constant image is zero") {
  const auto stats = stats_map(Image::Constant(12, 9, 0.7), 5);
  CHECK((stats.strength == 0.0).all());
  CHECK((stats.coherence == 0.0).all());
  CHECK(stats.patch_size == 5);
}

TEST_CASE("stats_map rejects even or non-positive k_r") {
  const Image img = Image::Zero(8, 8);
  for (int k : {0, -3, 4, 10}) {
    try {
      stats_map(img, k);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(e.dimension() == "k_r");
    }
  }
}

TEST_CASE("stats_map at interior pixels equals structure_stats of the extracted patch") {
  std::mt19937_64 rng(3);
  const int k = 5, r = k / 2;
  const Image img = testing::random_image(14, 13, rng);
  const auto stats = stats_map(img, k, StrengthNorm::kRaw);
  for (int m = r + 1; m < img.rows() - r - 1; ++m)
    for (int n = r + 1; n < img.cols() - r - 1; ++n) {
      Eigen::MatrixX2d g(k * k, 2);
      int row = 0;
      for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j, ++row) {
          g(row, 0) = (img(m + i, n + j + 1) - img(m + i, n + j - 1)) / 2;
          g(row, 1) = (img(m + i + 1, n + j) - img(m + i - 1, n + j)) / 2;
        }
      const auto s = structure_stats(g, k, StrengthNorm::kRaw);
      CHECK(rel(stats.strength(m, n), s.strength) < 1e-12);
      CHECK(std::abs(stats.coherence(m, n) - s.coherence) < 1e-12);
    }
}

TEST_CASE("vertical step edge is coherent and strong on the edge band") {
  Image img = Image::Zero(32, 32);
  img.rightCols(16).setConstant(1.0);
  const auto stats = stats_map(img, 5);
  for (int m = 0; m < 32; ++m) {
    for (int n : {15, 16}) {
      CHECK(stats.coherence(m, n) > 0.999);
      CHECK(stats.strength(m, n) > stats.strength(m, 2));
      CHECK(stats.strength(m, n) > stats.strength(m, 29));
    }
  }
}

TEST_CASE("coherence is invariant under intensity scaling") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testing::random_image(10, 11, rng);
    const double c = std::uniform_real_distribution<double>(0.05, 20.0)(rng);
    const auto a = stats_map(img, 3);
    const auto b = stats_map(Image(img * c), 3);
    CHECK((a.coherence - b.coherence).abs().maxCoeff() < 1e-9);
    CHECK(((b.strength - c * a.strength).abs() <= 1e-9 * c * a.strength.abs().maxCoeff()).all());
  }
}

TEST_CASE("stats maps rotate with the image") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Image img = testing::random_image(9, 12, rng);
    const auto a = stats_map(img, 5, StrengthNorm::kRaw);
    const auto b = stats_map(rot90(img), 5, StrengthNorm::kRaw);
    const Image ra = rot90(a.strength), rc = rot90(a.coherence);
    CHECK(((ra - b.strength).abs() <= 1e-12 * b.strength.abs().maxCoeff()).all());
    CHECK((rc - b.coherence).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("stats_map invariants on random images") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Image img = testing::random_image(8 + trial % 5, 9 + trial % 3, rng);
    for (auto norm : {StrengthNorm::kRaw, StrengthNorm::kSqrtOverPatch}) {
      const auto s = stats_map(img, 3 + 2 * (trial % 3), norm);
      CHECK((s.strength >= 0.0).all());
      CHECK((s.coherence >= 0.0).all());
      CHECK((s.coherence <= 1.0).all());
    }
  }
}

TEST_CASE("region_class_map examples and tie order") {
  GradStatsMap stats{Image(1, 3), Image(1, 3), 11, StrengthNorm::kSqrtOverPatch};
  stats.strength << 0.0, 5.0, 0.0;
  stats.coherence << 0.0, 0.2, 1.0;
  auto raw = [](double lambda, double mu) { return std::array<double, 3>{mu * 1.8, 0.35, lambda}; };
  const LabelMap labels = region_class_map(stats, raw);
  CHECK(labels(0, 0) == RegionLabel::kFlat);
  CHECK(labels(0, 1) == RegionLabel::kFine);
  CHECK(labels(0, 2) == RegionLabel::kEdge);

  auto all_equal = [](double, double) { return std::array<double, 3>{1.0, 1.0, 1.0}; };
  CHECK((region_class_map(stats, all_equal) == RegionLabel::kEdge).all());
  auto fine_flat_tie = [](double, double) { return std::array<double, 3>{0.0, 1.0, 1.0}; };
  CHECK((region_class_map(stats, fine_flat_tie) == RegionLabel::kFine).all());
}

TEST_CASE("region_class_map ignores order-preserving transforms of the logits") {
  std::mt19937_64 rng(7);
  const Image img = testing::random_image(16, 16, rng);
  const auto stats = stats_map(img, 5);
  auto raw = [](double lambda, double mu) { return std::array<double, 3>{mu * 1.8, 0.35, lambda}; };
  auto softened = [](double lambda, double mu) {
    const std::array<double, 3> z{mu * 1.8, 0.35, lambda};
    const double top = std::max({z[0], z[1], z[2]});
    double total = 0;
    std::array<double, 3> e{};
    for (int i = 0; i < 3; ++i) total += e[i] = std::exp(z[i] - top);
    for (auto& v : e) v /= total;
    return e;
  };
  auto cubed = [](double lambda, double mu) {
    return std::array<double, 3>{std::pow(mu * 1.8, 3) + 2, std::pow(0.35, 3) + 2, std::pow(lambda, 3) + 2};
  };
  const LabelMap a = region_class_map(stats, raw);
  CHECK((a == region_class_map(stats, softened)).all());
  CHECK((a == region_class_map(stats, cubed)).all());
}

TEST_CASE("strength normalisation names round-trip") {
  for (auto norm : {StrengthNorm::kRaw, StrengthNorm::kSqrtOverPatch}) CHECK(parse_strength_norm(to_string(norm)) == norm);
  CHECK(parse_strength_norm("sqrt-over-kr") == StrengthNorm::kSqrtOverPatch);
  CHECK_THROWS(parse_strength_norm("log"));
}
