#pragma once

#include "skpn/gradstats.hpp"
#include "skpn/image.hpp"
#include "skpn/tensor.hpp"

#include <array>
#include <span>
#include <string>

namespace skpn {

enum class WindowKind { kUniform, kGaussian };

WindowKind parse_window_kind(const std::string& name);
std::string to_string(WindowKind kind);

// Stabilisers follow the usual SSIM definition, c1 = (0.01 L)^2 and
// c2 = (0.03 L)^2 for data range L.
struct SsimConstants {
  double c1 = 1e-4;
  double c2 = 9e-4;
  int window = 11;
  WindowKind kind = WindowKind::kUniform;
  double gaussian_sigma = 1.5;

  static SsimConstants for_range(double data_range, int window = 11,
                                 WindowKind kind = WindowKind::kUniform);
};

// Normalised window weights (window x window, sums to 1).
Image window_weights(const SsimConstants& consts);

inline double l1_pixel(double yhat, double y) { return std::abs(yhat - y); }
inline double l1_pixel_grad(double yhat, double y) {
  return yhat > y ? 1.0 : (yhat < y ? -1.0 : 0.0);
}
inline double l2_pixel(double yhat, double y) { return (yhat - y) * (yhat - y); }
inline double l2_pixel_grad(double yhat, double y) { return 2.0 * (yhat - y); }

// Single-window SSIM of two equally sized patches.
double ssim_patch(const Image& p, const Image& q, const SsimConstants& consts);
// d ssim_patch / d p.
Image ssim_patch_grad(const Image& p, const Image& q, const SsimConstants& consts);

struct LossWeights {
  Image gamma1;  // L2
  Image gamma2;  // L1
  Image gamma3;  // SSIM
  double sigma_l2 = 1.8;
  double sigma_l1 = 0.35;
};

// softmax([coherence * sigma_l2, sigma_l1, strength]) as {gamma1, gamma2, gamma3}.
std::array<double, 3> pixel_weights(double strength, double coherence, double sigma_l2, double sigma_l1);

LossWeights loss_weights(const GradStatsMap& stats, double sigma_l2 = 1.8, double sigma_l1 = 0.35);

LabelMap region_class_map(const GradStatsMap& stats, double sigma_l2, double sigma_l1);

// gamma1 * L2 + gamma2 * L1 - gamma3 * SSIM(p, q) at one pixel.
double weighted_pixel_loss(const Image& yhat_patch, const Image& y_patch, double yhat_center,
                           double y_center, const std::array<double, 3>& gammas,
                           const SsimConstants& consts);

// Structure-aware loss: mean over pixels of (L_w + L1) / 2. The SSIM patch of
// each pixel is its consts.window neighbourhood with replicated borders.
double struct_loss(const Image& yhat, const Image& y, const LossWeights& weights,
                   const SsimConstants& consts);
// Gradient of struct_loss w.r.t. yhat.
Image struct_loss_grad(const Image& yhat, const Image& y, const LossWeights& weights,
                       const SsimConstants& consts);

// Tape op over a [N,1,H,W] prediction; averages struct_loss over the batch.
// Targets and weights are constants.
Tensor struct_loss(const Tensor& yhat, std::span<const Image> targets,
                   std::span<const LossWeights> weights, const SsimConstants& consts);

}  // namespace skpn
