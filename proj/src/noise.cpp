#include "skpn/noise.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace skpn {

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "poisson-gaussian") return NoiseKind::kPoissonGaussian;
  throw std::invalid_argument("unknown noise kind '" + name + "' (gaussian | poisson-gaussian)");
}

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::kGaussian ? "gaussian" : "poisson-gaussian";
}

void NoiseModel::validate() const {
  if (!(gaussian_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(poisson_scale > 0.0)) throw std::invalid_argument("poisson scale must be > 0");
}

Image add_noise(const Image& clean, const NoiseModel& noise, std::uint64_t seed) {
  noise.validate();
  std::mt19937_64 rng(seed);
  Image out = clean;
  if (noise.kind == NoiseKind::kPoissonGaussian) {
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      const double mean = std::max(out.data()[i], 0.0) * noise.poisson_scale;
      if (mean <= 0.0) continue;
      std::poisson_distribution<long long> counts(mean);
      out.data()[i] = static_cast<double>(counts(rng)) / noise.poisson_scale;
    }
  }
  if (noise.gaussian_sigma > 0.0) {
    std::normal_distribution<double> normal(0.0, noise.gaussian_sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += normal(rng);
  }
  return out.max(0.0).min(1.0);
}

}  // namespace skpn
