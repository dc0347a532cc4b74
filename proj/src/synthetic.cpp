#include "w2t/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "w2t/random.hpp"

namespace w2t {

SlideImage make_synthetic_slide(const std::string& slide_id, std::uint64_t seed, int width_px, int height_px) {
  Rng rng(seed ^ fnv1a64(slide_id.data(), slide_id.size()));
  SlideImage img(slide_id, width_px, height_px);

  // Stain colour: H&E-like pinks and purples, varied per slide.
  const double base_r = 150 + 80 * rng.uniform();
  const double base_g = 40 + 80 * rng.uniform();
  const double base_b = 120 + 100 * rng.uniform();

  struct Blob {
    double cx, cy, rx, ry, shade;
  };
  std::vector<Blob> blobs;
  const int n_blobs = 2 + static_cast<int>(rng.below(3));
  for (int i = 0; i < n_blobs; ++i) {
    blobs.push_back({width_px * (0.2 + 0.6 * rng.uniform()), height_px * (0.2 + 0.6 * rng.uniform()),
                     width_px * (0.12 + 0.18 * rng.uniform()), height_px * (0.12 + 0.18 * rng.uniform()),
                     0.7 + 0.3 * rng.uniform()});
  }

  for (int y = 0; y < height_px; ++y) {
    for (int x = 0; x < width_px; ++x) {
      std::uint8_t* px = img.at(x, y);
      double inside = 0.0;
      for (const auto& b : blobs) {
        const double dx = (x - b.cx) / b.rx, dy = (y - b.cy) / b.ry;
        if (dx * dx + dy * dy <= 1.0) inside = std::max(inside, b.shade);
      }
      // Coarse 8x8 texture keeps the PNG small and the descriptor varied.
      const double tex = 0.85 + 0.3 * std::fabs(std::sin(0.7 * (x / 8) + 1.3 * (y / 8) + double(seed % 7)));
      if (inside > 0.0) {
        px[0] = static_cast<std::uint8_t>(std::clamp(base_r * inside * tex, 0.0, 255.0));
        px[1] = static_cast<std::uint8_t>(std::clamp(base_g * inside * tex, 0.0, 255.0));
        px[2] = static_cast<std::uint8_t>(std::clamp(base_b * inside * tex, 0.0, 255.0));
      } else {
        const auto g = static_cast<std::uint8_t>(236 + (x / 8 + y / 8) % 3);
        px[0] = g;
        px[1] = g;
        px[2] = static_cast<std::uint8_t>(g - 4);
      }
    }
  }
  return img;
}

}  // namespace w2t
