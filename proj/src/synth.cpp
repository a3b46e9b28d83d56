#include "skpn/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace skpn {

Image synth_image(int size, std::uint64_t seed, int index) {
  if (size < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto count = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const double s = size;

  Image img(size, size);
  const double angle = uniform(0, 2 * std::numbers::pi);
  const double slope = uniform(0.05, 0.3) / s;
  const double offset = uniform(0.25, 0.55);
  for (int m = 0; m < size; ++m) {
    for (int n = 0; n < size; ++n) {
      img(m, n) = offset + slope * ((n - s / 2) * std::cos(angle) + (m - s / 2) * std::sin(angle));
    }
  }

  for (int e = count(1, 3); e > 0; --e) {
    const double theta = uniform(0, std::numbers::pi);
    const double cm = uniform(0.2, 0.8) * s, cn = uniform(0.2, 0.8) * s;
    const double step = uniform(0.15, 0.35) * (count(0, 1) ? 1 : -1);
    for (int m = 0; m < size; ++m) {
      for (int n = 0; n < size; ++n) {
        if ((n - cn) * std::cos(theta) + (m - cm) * std::sin(theta) > 0) img(m, n) += step;
      }
    }
  }

  for (int b = count(1, 3); b > 0; --b) {
    const double cm = uniform(0, s), cn = uniform(0, s);
    const double sigma = uniform(0.05, 0.15) * s;
    const double amp = uniform(0.15, 0.35) * (count(0, 1) ? 1 : -1);
    for (int m = 0; m < size; ++m) {
      for (int n = 0; n < size; ++n) {
        const double d2 = (m - cm) * (m - cm) + (n - cn) * (n - cn);
        img(m, n) += amp * std::exp(-d2 / (2 * sigma * sigma));
      }
    }
  }

  {
    const double cm = uniform(0.25, 0.75) * s, cn = uniform(0.25, 0.75) * s;
    const double radius = uniform(0.12, 0.25) * s;
    const double period = uniform(3.0, 8.0);
    const double dir = uniform(0, std::numbers::pi);
    const double amp = uniform(0.08, 0.2);
    for (int m = 0; m < size; ++m) {
      for (int n = 0; n < size; ++n) {
        if ((m - cm) * (m - cm) + (n - cn) * (n - cn) > radius * radius) continue;
        const double u = n * std::cos(dir) + m * std::sin(dir);
        img(m, n) += amp * std::sin(2 * std::numbers::pi * u / period);
      }
    }
  }
  return img.max(0.0).min(1.0);
}

std::vector<Image> procedural_corpus(int count, int size, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(synth_image(size, seed, i));
  return out;
}

}  // namespace skpn
