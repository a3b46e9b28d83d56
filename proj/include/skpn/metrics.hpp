#pragma once

#include "skpn/image.hpp"
#include "skpn/losses.hpp"

#include <limits>
#include <string>
#include <vector>

namespace skpn {

// 10 log10(L^2 / MSE). Identical images give +infinity.
double psnr(const Image& a, const Image& b, double data_range = 1.0);

// Mean SSIM over every fully contained window position (no padding).
double ssim_image(const Image& a, const Image& b, const SsimConstants& consts = SsimConstants{});

struct ImageScore {
  std::string file;
  double psnr_noisy = 0;
  double ssim_noisy = 0;
  double psnr_denoised = 0;
  double ssim_denoised = 0;
};

struct EvalReport {
  std::vector<ImageScore> images;
  double mean_psnr_noisy = 0;
  double mean_ssim_noisy = 0;
  double mean_psnr_denoised = 0;
  double mean_ssim_denoised = 0;
  // Images whose PSNR was infinite and left out of the PSNR means.
  int excluded_noisy = 0;
  int excluded_denoised = 0;
};

// Fills the aggregate fields from `images`, in order.
void summarize(EvalReport& report);

// "file,psnr_noisy,ssim_noisy,psnr_denoised,ssim_denoised", one row per image.
std::string report_csv(const EvalReport& report);

}  // namespace skpn
