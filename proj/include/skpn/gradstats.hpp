#pragma once

#include "skpn/error.hpp"
#include "skpn/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <string>
#include <utility>

namespace skpn {

// How the dominant structure-tensor eigenvalue is turned into the strength
// fed to the loss-weight softmax.
//   kRaw:           strength = lambda1
//   kSqrtOverPatch: strength = sqrt(lambda1) / k_r  (RMS dominant gradient)
enum class StrengthNorm { kRaw, kSqrtOverPatch };

StrengthNorm parse_strength_norm(const std::string& name);
std::string to_string(StrengthNorm norm);

inline constexpr double kCoherenceEpsilon = 1e-12;

template <typename Scalar>
struct StructureStats {
  Scalar lambda1 = 0;    // larger eigenvalue of G^T G
  Scalar lambda2 = 0;    // smaller eigenvalue of G^T G, clamped at 0
  Scalar strength = 0;   // normalised lambda1
  Scalar coherence = 0;  // (sqrt(l1) - sqrt(l2)) / (sqrt(l1) + sqrt(l2))
};

struct GradStatsMap {
  Image strength;
  Image coherence;
  int patch_size = 0;
  StrengthNorm norm = StrengthNorm::kSqrtOverPatch;
};

// Central differences, edge-replicated. gx runs along columns, gy along rows.
template <typename Derived>
std::pair<ImageT<typename Derived::Scalar>, ImageT<typename Derived::Scalar>> image_gradients(
    const Eigen::DenseBase<Derived>& img) {
  using Scalar = typename Derived::Scalar;
  if (img.rows() < 3 || img.cols() < 3) {
    throw ShapeError("H,W", "image_gradients needs at least 3x3, got " + std::to_string(img.rows()) +
                                "x" + std::to_string(img.cols()));
  }
  const Eigen::Index h = img.rows(), w = img.cols();
  ImageT<Scalar> gx(h, w), gy(h, w);
  for (Eigen::Index m = 0; m < h; ++m) {
    for (Eigen::Index n = 0; n < w; ++n) {
      gx(m, n) = (replicated(img, m, n + 1) - replicated(img, m, n - 1)) / Scalar(2);
      gy(m, n) = (replicated(img, m + 1, n) - replicated(img, m - 1, n)) / Scalar(2);
    }
  }
  return {std::move(gx), std::move(gy)};
}

// Eigen-decomposition of the 2x2 structure tensor [[sxx, sxy], [sxy, syy]]
// in closed form.
template <typename Scalar>
StructureStats<Scalar> structure_stats_from_tensor(Scalar sxx, Scalar sxy, Scalar syy, int patch_size,
                                                   StrengthNorm norm = StrengthNorm::kSqrtOverPatch) {
  using std::hypot;
  using std::max;
  using std::sqrt;
  StructureStats<Scalar> out;
  const Scalar mean = (sxx + syy) / Scalar(2);
  const Scalar radius = hypot((sxx - syy) / Scalar(2), sxy);
  out.lambda1 = max(mean + radius, Scalar(0));
  out.lambda2 = max(mean - radius, Scalar(0));
  const Scalar s1 = sqrt(out.lambda1), s2 = sqrt(out.lambda2);
  out.coherence = (s1 + s2 < Scalar(kCoherenceEpsilon)) ? Scalar(0) : (s1 - s2) / (s1 + s2);
  out.strength = norm == StrengthNorm::kRaw ? out.lambda1 : s1 / Scalar(patch_size);
  return out;
}

// Statistics of a flattened (rows x 2) patch gradient matrix G.
template <typename Derived>
StructureStats<typename Derived::Scalar> structure_stats(const Eigen::MatrixBase<Derived>& g, int patch_size,
                                                         StrengthNorm norm = StrengthNorm::kSqrtOverPatch) {
  static_assert(Derived::ColsAtCompileTime == 2 || Derived::ColsAtCompileTime == Eigen::Dynamic);
  if (g.cols() != 2) throw ShapeError("cols", "gradient matrix must have 2 columns");
  const auto gtg = (g.transpose() * g).eval();
  return structure_stats_from_tensor(gtg(0, 0), gtg(0, 1), gtg(1, 1), patch_size, norm);
}

namespace detail {

// Replicate-bordered k x k box sum, separable.
template <typename Scalar>
ImageT<Scalar> replicated_box_sum(const ImageT<Scalar>& src, int k) {
  const Eigen::Index h = src.rows(), w = src.cols(), half = k / 2;
  ImageT<Scalar> rows_done(h, w), out(h, w);
  for (Eigen::Index m = 0; m < h; ++m) {
    for (Eigen::Index n = 0; n < w; ++n) {
      Scalar acc = 0;
      for (Eigen::Index j = -half; j <= half; ++j) acc += src(m, clamp_index(n + j, w));
      rows_done(m, n) = acc;
    }
  }
  for (Eigen::Index m = 0; m < h; ++m) {
    for (Eigen::Index n = 0; n < w; ++n) {
      Scalar acc = 0;
      for (Eigen::Index i = -half; i <= half; ++i) acc += rows_done(clamp_index(m + i, h), n);
      out(m, n) = acc;
    }
  }
  return out;
}

}  // namespace detail

// Per-pixel strength and coherence over the k_r x k_r neighbourhood of the
// gradient field. Computed on the clean (ground-truth) image only.
template <typename Derived>
GradStatsMap stats_map(const Eigen::DenseBase<Derived>& img, int patch_size,
                       StrengthNorm norm = StrengthNorm::kSqrtOverPatch) {
  if (patch_size <= 0 || patch_size % 2 == 0) {
    throw ShapeError("k_r", "patch size must be a positive odd integer, got " + std::to_string(patch_size));
  }
  const Image src = img.template cast<double>();
  const auto [gx, gy] = image_gradients(src);
  const Image sxx = detail::replicated_box_sum<double>(gx * gx, patch_size);
  const Image sxy = detail::replicated_box_sum<double>(gx * gy, patch_size);
  const Image syy = detail::replicated_box_sum<double>(gy * gy, patch_size);

  GradStatsMap out{Image(src.rows(), src.cols()), Image(src.rows(), src.cols()), patch_size, norm};
  for (Eigen::Index m = 0; m < src.rows(); ++m) {
    for (Eigen::Index n = 0; n < src.cols(); ++n) {
      const auto s = structure_stats_from_tensor(sxx(m, n), sxy(m, n), syy(m, n), patch_size, norm);
      out.strength(m, n) = s.strength;
      out.coherence(m, n) = s.coherence;
    }
  }
  return out;
}

// Pixel label from the dominant loss weight. `weights_fn(strength,
// coherence)` returns {gamma_l2, gamma_l1, gamma_ssim}; L2 -> edge,
// SSIM -> fine, L1 -> flat, ties resolved edge > fine > flat.
template <typename WeightsFn>
LabelMap region_class_map(const GradStatsMap& stats, WeightsFn&& weights_fn) {
  LabelMap labels(stats.strength.rows(), stats.strength.cols());
  for (Eigen::Index m = 0; m < labels.rows(); ++m) {
    for (Eigen::Index n = 0; n < labels.cols(); ++n) {
      const std::array<double, 3> g = weights_fn(stats.strength(m, n), stats.coherence(m, n));
      RegionLabel label = RegionLabel::kEdge;
      double best = g[0];
      if (g[2] > best) {
        label = RegionLabel::kFine;
        best = g[2];
      }
      if (g[1] > best) label = RegionLabel::kFlat;
      labels(m, n) = label;
    }
  }
  return labels;
}

}  // namespace skpn
