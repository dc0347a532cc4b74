#include "w2t/feature_extractor.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/random.hpp"

namespace w2t {

static_assert(std::endian::native == std::endian::little,
              "bag serialization assumes a little-endian host");

void EmbeddingBag::validate() const {
  if (size == 0) throw Error(ErrorCode::kEmptyBag, "bag '" + slide_id + "' has no patches");
  if (width == 0) throw Error(ErrorCode::kFormatError, "bag width must be positive");
  if (embeddings.size() != size * width)
    throw Error(ErrorCode::kFormatError, "embedding buffer does not match M x l");
  if (coords.size() != size) throw Error(ErrorCode::kFormatError, "coords count != M");
  for (float v : embeddings) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, "bag '" + slide_id + "'");
  }
}

bool EmbeddingBag::operator==(const EmbeddingBag& other) const {
  return slide_id == other.slide_id && size == other.size && width == other.width &&
         coords == other.coords && embeddings.size() == other.embeddings.size() &&
         std::memcmp(embeddings.data(), other.embeddings.data(), embeddings.size() * sizeof(float)) == 0;
}

PatchDescriptor describe_patch(const SlideImage& img, const Patch& patch, int ps) {
  PatchDescriptor d{};
  const double n = static_cast<double>(ps) * ps;
  std::array<double, 3> sum{}, sum_sq{};
  std::array<std::array<double, 8>, 3> hist{};
  for (int y = patch.y0; y < patch.y0 + ps; ++y) {
    for (int x = patch.x0; x < patch.x0 + ps; ++x) {
      const std::uint8_t* p = img.at(x, y);
      for (int c = 0; c < 3; ++c) {
        const double v = p[c] / 255.0;
        sum[c] += v;
        sum_sq[c] += v * v;
        hist[c][p[c] >> 5] += 1.0;
      }
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / n;
    d[c] = mean;
    d[3 + c] = std::sqrt(std::max(0.0, sum_sq[c] / n - mean * mean));
    for (int b = 0; b < 8; ++b) d[6 + c * 8 + b] = hist[c][b] / n;
  }
  return d;
}

std::vector<double> projection_matrix(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(kDescriptorSize * dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kDescriptorSize));
  for (auto& v : w) v = rng.normal() * scale;
  return w;
}

EmbeddingBag extract_builtin(const SlideImage& img, const TileSet& tiles, std::size_t dim,
                             std::uint64_t seed) {
  if (tiles.patches.empty()) throw Error(ErrorCode::kEmptyBag, "tile set is empty");
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "embedding width must be >= 1");
  img.validate();
  const int ps = tiles.patch_size_px;
  for (const auto& p : tiles.patches) {
    if (p.x0 < 0 || p.y0 < 0 || p.x0 + ps > img.width_px || p.y0 + ps > img.height_px)
      throw Error(ErrorCode::kAlignmentMismatch, "patch outside image bounds");
  }

  const auto proj = projection_matrix(dim, seed);
  EmbeddingBag bag;
  bag.slide_id = tiles.slide_id.empty() ? img.slide_id : tiles.slide_id;
  bag.size = tiles.patches.size();
  bag.width = dim;
  bag.embeddings.resize(bag.size * dim);
  bag.extractor_tag = "builtin-color-stats-v1/seed=" + std::to_string(seed);
  for (std::size_t i = 0; i < bag.size; ++i) {
    const auto& p = tiles.patches[i];
    const PatchDescriptor d = describe_patch(img, p, ps);
    float* out = bag.embeddings.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kDescriptorSize; ++k) acc += d[k] * proj[k * dim + j];
      out[j] = static_cast<float>(acc);
    }
    bag.coords.push_back({static_cast<std::uint32_t>(p.row), static_cast<std::uint32_t>(p.col)});
  }
  bag.validate();
  return bag;
}

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kFormatError, "bag file truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_bag(const EmbeddingBag& bag) {
  bag.validate();
  if (bag.slide_id.size() > 0xFFFF) throw Error(ErrorCode::kFormatError, "slide id too long");
  std::string out = "W2TB";
  put<std::uint32_t>(out, kBagFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.size));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(bag.width));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(bag.slide_id.size()));
  out += bag.slide_id;
  out.append(reinterpret_cast<const char*>(bag.embeddings.data()), bag.embeddings.size() * sizeof(float));
  for (const auto& c : bag.coords) {
    put<std::uint32_t>(out, c.row);
    put<std::uint32_t>(out, c.col);
  }
  return out;
}

EmbeddingBag deserialize_bag(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != "W2TB") throw Error(ErrorCode::kFormatError, "bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kBagFormatVersion)
    throw Error(ErrorCode::kFormatError, "unsupported bag version " + std::to_string(version));
  EmbeddingBag bag;
  bag.size = r.get<std::uint32_t>();
  bag.width = r.get<std::uint32_t>();
  const auto id_len = r.get<std::uint16_t>();
  bag.slide_id = std::string(r.take(id_len));
  const std::size_t expected = bag.size * bag.width * sizeof(float) + bag.size * 8;
  if (r.remaining() != expected)
    throw Error(ErrorCode::kFormatError, "payload size does not match declared M=" +
                                             std::to_string(bag.size) + ", l=" + std::to_string(bag.width));
  bag.embeddings.resize(bag.size * bag.width);
  const auto raw = r.take(bag.embeddings.size() * sizeof(float));
  std::memcpy(bag.embeddings.data(), raw.data(), raw.size());
  bag.coords.resize(bag.size);
  for (auto& c : bag.coords) {
    c.row = r.get<std::uint32_t>();
    c.col = r.get<std::uint32_t>();
  }
  bag.extractor_tag = "imported";
  bag.validate();
  return bag;
}

EmbeddingBag import_bag(const std::filesystem::path& path) {
  return deserialize_bag(read_file(path));
}

void export_bag(const EmbeddingBag& bag, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_bag(bag));
}

}  // namespace w2t
