#pragma once

#include "skpn/image.hpp"

#include <cstdint>
#include <vector>

namespace skpn {

// Procedural grayscale scene in [0,1]: a background ramp plus random step
// edges, Gaussian blobs and a striped texture patch.
Image synth_image(int size, std::uint64_t seed, int index);

std::vector<Image> procedural_corpus(int count, int size, std::uint64_t seed);

}  // namespace skpn
