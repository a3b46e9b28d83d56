#pragma once

#include "skpn/image.hpp"

#include <cstdint>
#include <string>

namespace skpn {

enum class NoiseKind { kGaussian, kPoissonGaussian };

NoiseKind parse_noise_kind(const std::string& name);
std::string to_string(NoiseKind kind);

struct NoiseModel {
  NoiseKind kind = NoiseKind::kGaussian;
  double gaussian_sigma = 0.1;
  double poisson_scale = 1000.0;  // simulated photon count at intensity 1

  void validate() const;
};

// Noisy copy of a [0,1] image, clamped back to [0,1]; deterministic per seed.
Image add_noise(const Image& clean, const NoiseModel& noise, std::uint64_t seed);

}  // namespace skpn
