#pragma once

#include <cstdint>
#include <string>

#include "w2t/slide_tiler.hpp"

namespace w2t {

// Procedural slide: low-saturation background with a few stained tissue
// blobs whose hue and texture depend on the seed.
SlideImage make_synthetic_slide(const std::string& slide_id, std::uint64_t seed, int width_px = 512,
                                int height_px = 512);

}  // namespace w2t
