#include "skpn/metrics.hpp"

#include "skpn/error.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace skpn {
namespace {

void require_same_dims(const Image& a, const Image& b) {
  if (a.rows() != b.rows()) throw ShapeError("H", "metric inputs differ in height");
  if (a.cols() != b.cols()) throw ShapeError("W", "metric inputs differ in width");
}

// Windowed weighted sums of `src` at every valid position, via a direct
// correlation with the window weights.
Image window_mean(const Image& src, const Image& wt) {
  const Eigen::Index k = wt.rows();
  const Eigen::Index oh = src.rows() - k + 1, ow = src.cols() - k + 1;
  Image out = Image::Zero(oh, ow);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      out += wt(i, j) * src.block(i, j, oh, ow);
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double psnr(const Image& a, const Image& b, double data_range) {
  require_same_dims(a, b);
  if (a.size() == 0) throw ShapeError("H,W", "psnr of empty images");
  const double mse = (a - b).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim_image(const Image& a, const Image& b, const SsimConstants& consts) {
  require_same_dims(a, b);
  if (a.rows() < consts.window || a.cols() < consts.window) {
    throw ShapeError("window", "image " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                   " is smaller than the " + std::to_string(consts.window) + " SSIM window");
  }
  const Image wt = window_weights(consts);
  const Image mu_a = window_mean(a, wt);
  const Image mu_b = window_mean(b, wt);
  const Image var_a = window_mean(a * a, wt) - mu_a.square();
  const Image var_b = window_mean(b * b, wt) - mu_b.square();
  const Image cov = window_mean(a * b, wt) - mu_a * mu_b;
  const Image map = ((2.0 * mu_a * mu_b + consts.c1) * (2.0 * cov + consts.c2)) /
                    ((mu_a.square() + mu_b.square() + consts.c1) * (var_a + var_b + consts.c2));
  return map.mean();
}

void summarize(EvalReport& report) {
  double pn = 0, sn = 0, pd = 0, sd = 0;
  int n_pn = 0, n_pd = 0;
  report.excluded_noisy = report.excluded_denoised = 0;
  for (const auto& s : report.images) {
    if (std::isinf(s.psnr_noisy)) {
      ++report.excluded_noisy;
    } else {
      pn += s.psnr_noisy;
      ++n_pn;
    }
    if (std::isinf(s.psnr_denoised)) {
      ++report.excluded_denoised;
    } else {
      pd += s.psnr_denoised;
      ++n_pd;
    }
    sn += s.ssim_noisy;
    sd += s.ssim_denoised;
  }
  if (report.excluded_noisy + report.excluded_denoised > 0) {
    std::cerr << "warning: " << report.excluded_noisy + report.excluded_denoised
              << " infinite PSNR value(s) excluded from the means\n";
  }
  const double n = static_cast<double>(report.images.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.mean_psnr_noisy = n_pn ? pn / n_pn : nan;
  report.mean_psnr_denoised = n_pd ? pd / n_pd : nan;
  report.mean_ssim_noisy = n > 0 ? sn / n : nan;
  report.mean_ssim_denoised = n > 0 ? sd / n : nan;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "file,psnr_noisy,ssim_noisy,psnr_denoised,ssim_denoised\n";
  for (const auto& s : report.images) {
    os << s.file << ',' << fmt(s.psnr_noisy) << ',' << fmt(s.ssim_noisy) << ',' << fmt(s.psnr_denoised)
       << ',' << fmt(s.ssim_denoised) << '\n';
  }
  return os.str();
}

}  // namespace skpn
