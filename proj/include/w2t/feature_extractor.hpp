#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "w2t/slide_tiler.hpp"

namespace w2t {

struct GridCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool operator==(const GridCoord&) const = default;
};

// The MIL bag for one slide: one frozen embedding row per kept patch, in
// TileSet order.
struct EmbeddingBag {
  std::string slide_id;
  std::size_t size = 0;   // M
  std::size_t width = 0;  // l
  std::vector<float> embeddings;  // size x width, row-major
  std::vector<GridCoord> coords;
  std::string extractor_tag;

  const float* row(std::size_t i) const { return embeddings.data() + i * width; }
  void validate() const;
  // Bitwise on the matrix; the extractor tag is provenance, not content.
  bool operator==(const EmbeddingBag& other) const;
};

inline constexpr std::size_t kDescriptorSize = 30;
using PatchDescriptor = std::array<double, kDescriptorSize>;

// Per-channel mean, per-channel std, then an 8-bin histogram per channel
// (fractions). Channel values are scaled to [0,1].
PatchDescriptor describe_patch(const SlideImage& img, const Patch& patch, int patch_size_px);

// Fixed Gaussian projection (kDescriptorSize x dim) derived from the seed.
std::vector<double> projection_matrix(std::size_t dim, std::uint64_t seed);

EmbeddingBag extract_builtin(const SlideImage& img, const TileSet& tiles, std::size_t dim,
                             std::uint64_t seed);

inline constexpr std::uint32_t kBagFormatVersion = 1;

EmbeddingBag import_bag(const std::filesystem::path& path);
void export_bag(const EmbeddingBag& bag, const std::filesystem::path& path);

std::string serialize_bag(const EmbeddingBag& bag);
EmbeddingBag deserialize_bag(std::string_view bytes);

}  // namespace w2t
