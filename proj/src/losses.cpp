#include "skpn/losses.hpp"

#include "skpn/error.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace skpn {
namespace {

struct WindowMoments {
  double mu_p = 0, mu_q = 0, var_p = 0, var_q = 0, cov = 0;
};

// Derivatives of SSIM w.r.t. the window moments.
struct SsimPartials {
  double value = 0, d_mu_p = 0, d_var_p = 0, d_cov = 0;
};

SsimPartials ssim_partials(const WindowMoments& s, const SsimConstants& c) {
  const double a1 = 2.0 * s.mu_p * s.mu_q + c.c1;
  const double a2 = 2.0 * s.cov + c.c2;
  const double b1 = s.mu_p * s.mu_p + s.mu_q * s.mu_q + c.c1;
  const double b2 = s.var_p + s.var_q + c.c2;
  SsimPartials out;
  out.value = (a1 * a2) / (b1 * b2);
  out.d_mu_p = 2.0 * s.mu_q * a2 / (b1 * b2) - out.value * 2.0 * s.mu_p / b1;
  out.d_cov = 2.0 * a1 / (b1 * b2);
  out.d_var_p = -out.value / b2;
  return out;
}

// Two-pass weighted moments of the window centred on (m, n), replicated borders.
WindowMoments window_moments(const Image& p_img, const Image& q_img, Eigen::Index m, Eigen::Index n,
                             const Image& wt) {
  const Eigen::Index k = wt.rows(), half = k / 2;
  const Eigen::Index h = p_img.rows(), w = p_img.cols();
  WindowMoments s;
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index row = clamp_index(m + i - half, h);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index col = clamp_index(n + j - half, w);
      s.mu_p += wt(i, j) * p_img(row, col);
      s.mu_q += wt(i, j) * q_img(row, col);
    }
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index row = clamp_index(m + i - half, h);
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::Index col = clamp_index(n + j - half, w);
      const double dp = p_img(row, col) - s.mu_p;
      const double dq = q_img(row, col) - s.mu_q;
      s.var_p += wt(i, j) * (dp * dp);
      s.var_q += wt(i, j) * (dq * dq);
      s.cov += wt(i, j) * (dp * dq);
    }
  }
  return s;
}

void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (a.rows() != b.rows()) throw ShapeError("H", std::string(what) + ": row count mismatch");
  if (a.cols() != b.cols()) throw ShapeError("W", std::string(what) + ": column count mismatch");
}

void check_window(const Image& p, const SsimConstants& consts) {
  if (p.rows() != consts.window || p.cols() != consts.window) {
    throw ShapeError("window", "patch is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                                   ", window is " + std::to_string(consts.window));
  }
}

// Shared forward/backward pass; `grad` may be null.
double struct_loss_impl(const Image& yhat, const Image& y, const LossWeights& weights,
                        const SsimConstants& consts, Image* grad) {
  require_same_dims(yhat, y, "struct_loss");
  require_same_dims(yhat, weights.gamma1, "struct_loss weights");
  const Eigen::Index h = yhat.rows(), w = yhat.cols();
  const Image wt = window_weights(consts);
  const Eigen::Index k = wt.rows(), half = k / 2;
  const double norm = 1.0 / (2.0 * static_cast<double>(h * w));
  if (grad) grad->setZero(h, w);

  double total = 0.0;
  for (Eigen::Index m = 0; m < h; ++m) {
    for (Eigen::Index n = 0; n < w; ++n) {
      const double g1 = weights.gamma1(m, n), g2 = weights.gamma2(m, n), g3 = weights.gamma3(m, n);
      const double a = yhat(m, n), b = y(m, n);
      const WindowMoments s = window_moments(yhat, y, m, n, wt);
      const SsimPartials d = ssim_partials(s, consts);
      total += g1 * l2_pixel(a, b) + g2 * l1_pixel(a, b) - g3 * d.value + l1_pixel(a, b);
      if (!grad) continue;

      (*grad)(m, n) += norm * (g1 * l2_pixel_grad(a, b) + (g2 + 1.0) * l1_pixel_grad(a, b));
      const double coef = -norm * g3;
      for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index row = clamp_index(m + i - half, h);
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::Index col = clamp_index(n + j - half, w);
          const double dp = yhat(row, col) - s.mu_p;
          const double dq = y(row, col) - s.mu_q;
          (*grad)(row, col) += coef * wt(i, j) * (d.d_mu_p + 2.0 * d.d_var_p * dp + d.d_cov * dq);
        }
      }
    }
  }
  return total * norm;
}

}  // namespace

WindowKind parse_window_kind(const std::string& name) {
  if (name == "uniform") return WindowKind::kUniform;
  if (name == "gaussian") return WindowKind::kGaussian;
  throw std::invalid_argument("unknown SSIM window '" + name + "' (uniform | gaussian)");
}

std::string to_string(WindowKind kind) { return kind == WindowKind::kUniform ? "uniform" : "gaussian"; }

SsimConstants SsimConstants::for_range(double data_range, int window, WindowKind kind) {
  SsimConstants c;
  c.c1 = (0.01 * data_range) * (0.01 * data_range);
  c.c2 = (0.03 * data_range) * (0.03 * data_range);
  c.window = window;
  c.kind = kind;
  return c;
}

Image window_weights(const SsimConstants& consts) {
  if (consts.window <= 0 || consts.window % 2 == 0) {
    throw ShapeError("window", "SSIM window must be a positive odd size");
  }
  const int k = consts.window, half = k / 2;
  Image wt(k, k);
  if (consts.kind == WindowKind::kUniform) {
    wt.setConstant(1.0 / (k * k));
    return wt;
  }
  const double denom = 2.0 * consts.gaussian_sigma * consts.gaussian_sigma;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      wt(i, j) = std::exp(-((i - half) * (i - half) + (j - half) * (j - half)) / denom);
    }
  }
  return wt / wt.sum();
}

double ssim_patch(const Image& p, const Image& q, const SsimConstants& consts) {
  require_same_dims(p, q, "ssim_patch");
  check_window(p, consts);
  const Image wt = window_weights(consts);
  const Eigen::Index half = consts.window / 2;
  return ssim_partials(window_moments(p, q, half, half, wt), consts).value;
}

Image ssim_patch_grad(const Image& p, const Image& q, const SsimConstants& consts) {
  require_same_dims(p, q, "ssim_patch_grad");
  check_window(p, consts);
  const Image wt = window_weights(consts);
  const Eigen::Index half = consts.window / 2;
  const WindowMoments s = window_moments(p, q, half, half, wt);
  const SsimPartials d = ssim_partials(s, consts);
  return wt * (d.d_mu_p + 2.0 * d.d_var_p * (p - s.mu_p) + d.d_cov * (q - s.mu_q));
}

std::array<double, 3> pixel_weights(double strength, double coherence, double sigma_l2, double sigma_l1) {
  const std::array<double, 3> logits{coherence * sigma_l2, sigma_l1, strength};
  const double peak = std::max({logits[0], logits[1], logits[2]});
  std::array<double, 3> out{};
  double total = 0.0;
  for (int i = 0; i < 3; ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

LossWeights loss_weights(const GradStatsMap& stats, double sigma_l2, double sigma_l1) {
  const Eigen::Index h = stats.strength.rows(), w = stats.strength.cols();
  LossWeights out{Image(h, w), Image(h, w), Image(h, w), sigma_l2, sigma_l1};
  for (Eigen::Index m = 0; m < h; ++m) {
    for (Eigen::Index n = 0; n < w; ++n) {
      const auto g = pixel_weights(stats.strength(m, n), stats.coherence(m, n), sigma_l2, sigma_l1);
      out.gamma1(m, n) = g[0];
      out.gamma2(m, n) = g[1];
      out.gamma3(m, n) = g[2];
    }
  }
  return out;
}

LabelMap region_class_map(const GradStatsMap& stats, double sigma_l2, double sigma_l1) {
  return region_class_map(stats, [&](double strength, double coherence) {
    return pixel_weights(strength, coherence, sigma_l2, sigma_l1);
  });
}

double weighted_pixel_loss(const Image& yhat_patch, const Image& y_patch, double yhat_center,
                           double y_center, const std::array<double, 3>& gammas,
                           const SsimConstants& consts) {
  return gammas[0] * l2_pixel(yhat_center, y_center) + gammas[1] * l1_pixel(yhat_center, y_center) -
         gammas[2] * ssim_patch(yhat_patch, y_patch, consts);
}

double struct_loss(const Image& yhat, const Image& y, const LossWeights& weights,
                   const SsimConstants& consts) {
  return struct_loss_impl(yhat, y, weights, consts, nullptr);
}

Image struct_loss_grad(const Image& yhat, const Image& y, const LossWeights& weights,
                       const SsimConstants& consts) {
  Image grad;
  struct_loss_impl(yhat, y, weights, consts, &grad);
  return grad;
}

Tensor struct_loss(const Tensor& yhat, std::span<const Image> targets,
                   std::span<const LossWeights> weights, const SsimConstants& consts) {
  if (yhat.rank() != 4 || yhat.dim(1) != 1) {
    throw ShapeError("C", "struct_loss expects [N,1,H,W], got " + shape_string(yhat.shape()));
  }
  const auto batch = yhat.dim(0);
  if (static_cast<std::int64_t>(targets.size()) != batch ||
      static_cast<std::int64_t>(weights.size()) != batch) {
    throw ShapeError("N", "struct_loss: batch of " + std::to_string(batch) + " predictions, " +
                              std::to_string(targets.size()) + " targets, " +
                              std::to_string(weights.size()) + " weight maps");
  }
  auto grads = std::make_shared<std::vector<Image>>(batch);
  double total = 0.0;
  for (std::int64_t s = 0; s < batch; ++s) {
    Image* grad = yhat.requires_grad() ? &(*grads)[s] : nullptr;
    total += struct_loss_impl(yhat.image(s), targets[s], weights[s], consts, grad);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  return Tensor::make_result({}, {total * inv_batch}, "struct_loss", {yhat},
                             [grads, inv_batch](std::span<const double> grad, auto& pg) {
                               std::size_t offset = 0;
                               for (const Image& g : *grads) {
                                 for (Eigen::Index i = 0; i < g.size(); ++i) {
                                   pg[0][offset + i] = grad[0] * inv_batch * g.data()[i];
                                 }
                                 offset += static_cast<std::size_t>(g.size());
                               }
                             });
}

}  // namespace skpn
