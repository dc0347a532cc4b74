#include "w2t/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/random.hpp"

namespace w2t {

using ad::Tensor;

void W2TConfig::validate() const {
  if (bag_dim == 0 || hidden == 0 || heads == 0 || word_dim == 0 || enc_layers == 0 ||
      dec_layers == 0 || vocab_size == 0 || max_bag == 0 || max_question == 0 || max_answer == 0)
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must all be positive");
  if (hidden % heads != 0)
    throw Error(ErrorCode::kInvalidArgument, "hidden size must be divisible by the head count");
  if (vocab_size <= static_cast<std::size_t>(kNumReserved))
    throw Error(ErrorCode::kInvalidArgument, "vocabulary has no ordinary tokens");
}

W2TConfig W2TConfig::desk(std::size_t vocab_size, std::size_t bag_dim) {
  W2TConfig c;
  c.vocab_size = vocab_size;
  c.bag_dim = bag_dim;
  return c;
}

W2TConfig W2TConfig::large(std::size_t vocab_size, std::size_t bag_dim) {
  W2TConfig c;
  c.vocab_size = vocab_size;
  c.bag_dim = bag_dim;
  c.hidden = 512;
  c.word_dim = 512;
  c.heads = 4;
  c.enc_layers = 3;
  c.dec_layers = 3;
  return c;
}

nlohmann::json W2TConfig::to_json() const {
  return {{"bag_dim", bag_dim},       {"hidden", hidden},
          {"heads", heads},           {"word_dim", word_dim},
          {"enc_layers", enc_layers}, {"dec_layers", dec_layers},
          {"vocab_size", vocab_size}, {"max_bag", max_bag},
          {"max_question", max_question}, {"max_answer", max_answer},
          {"init_std", init_std},     {"zero_output_init", zero_output_init},
          {"ln_eps", ln_eps}};
}

W2TConfig W2TConfig::from_json(const nlohmann::json& j) {
  W2TConfig c;
  c.bag_dim = j.value("bag_dim", c.bag_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.word_dim = j.value("word_dim", c.word_dim);
  c.enc_layers = j.value("enc_layers", c.enc_layers);
  c.dec_layers = j.value("dec_layers", c.dec_layers);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_bag = j.value("max_bag", c.max_bag);
  c.max_question = j.value("max_question", c.max_question);
  c.max_answer = j.value("max_answer", c.max_answer);
  c.init_std = j.value("init_std", c.init_std);
  c.zero_output_init = j.value("zero_output_init", c.zero_output_init);
  c.ln_eps = j.value("ln_eps", c.ln_eps);
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

template <typename T>
Tensor<T> gaussian(std::size_t r, std::size_t c, double std, Rng& rng) {
  std::vector<T> v(r * c);
  for (auto& x : v) x = static_cast<T>(rng.normal() * std);
  return Tensor<T>::from(r, c, std::move(v), true);
}

template <typename T>
Tensor<T> filled(std::size_t r, std::size_t c, T value) {
  return Tensor<T>::from(r, c, std::vector<T>(r * c, value), true);
}

template <typename T>
AttentionWeights<T> init_attention(const W2TConfig& c, Rng& rng) {
  const auto l = c.hidden;
  return {gaussian<T>(l, l, c.init_std, rng), gaussian<T>(l, l, c.init_std, rng),
          gaussian<T>(l, l, c.init_std, rng), gaussian<T>(l, l, c.init_std, rng)};
}

template <typename T>
LayerNormWeights<T> init_norm(const W2TConfig& c) {
  return {filled<T>(1, c.hidden, T(1)), filled<T>(1, c.hidden, T(0))};
}

template <typename T>
FeedForwardWeights<T> init_ffn(const W2TConfig& c, Rng& rng) {
  return {gaussian<T>(c.hidden, c.ffn_dim(), c.init_std, rng), filled<T>(1, c.ffn_dim(), T(0)),
          gaussian<T>(c.ffn_dim(), c.hidden, c.init_std, rng), filled<T>(1, c.hidden, T(0))};
}

template <typename T, typename Fn>
void visit_attention(const std::string& prefix, const AttentionWeights<T>& a, Fn&& fn) {
  fn(prefix + ".wq", a.wq);
  fn(prefix + ".wk", a.wk);
  fn(prefix + ".wv", a.wv);
  fn(prefix + ".wo", a.wo);
}

template <typename T, typename Fn>
void visit_norm(const std::string& prefix, const LayerNormWeights<T>& n, Fn&& fn) {
  fn(prefix + ".gain", n.gain);
  fn(prefix + ".bias", n.bias);
}

template <typename T, typename Fn>
void visit_ffn(const std::string& prefix, const FeedForwardWeights<T>& f, Fn&& fn) {
  fn(prefix + ".w1", f.w1);
  fn(prefix + ".b1", f.b1);
  fn(prefix + ".w2", f.w2);
  fn(prefix + ".b2", f.b2);
}

// Canonical parameter order; checkpoints depend on it.
template <typename T, typename Fn>
void visit_params(const W2TParams<T>& p, Fn&& fn) {
  fn(std::string("word_embed"), p.word_embed);
  fn(std::string("align.w"), p.align_w);
  fn(std::string("align.b"), p.align_b);
  fn(std::string("text_pos"), p.text_pos);
  if (p.config.has_bag_projection()) {
    fn(std::string("bag_proj.w"), p.bag_proj_w);
    fn(std::string("bag_proj.b"), p.bag_proj_b);
  }
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string pre = "enc" + std::to_string(i);
    visit_attention(pre + ".self_attn", p.encoder[i].self_attn, fn);
    visit_norm(pre + ".norm1", p.encoder[i].norm1, fn);
    visit_ffn(pre + ".ffn", p.encoder[i].ffn, fn);
    visit_norm(pre + ".norm2", p.encoder[i].norm2, fn);
  }
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string pre = "dec" + std::to_string(i);
    visit_attention(pre + ".self_attn", p.decoder[i].self_attn, fn);
    visit_norm(pre + ".norm1", p.decoder[i].norm1, fn);
    visit_attention(pre + ".co_attn", p.decoder[i].co_attn, fn);
    visit_norm(pre + ".norm2", p.decoder[i].norm2, fn);
    visit_ffn(pre + ".ffn", p.decoder[i].ffn, fn);
    visit_norm(pre + ".norm3", p.decoder[i].norm3, fn);
  }
  fn(std::string("out.w"), p.out_w);
  fn(std::string("out.b"), p.out_b);
}

template <typename U, typename T>
Tensor<U> convert(const Tensor<T>& t) {
  if (!t.defined()) return {};
  std::vector<U> v(t.data().begin(), t.data().end());
  return Tensor<U>::from(t.rows(), t.cols(), std::move(v), true);
}

template <typename U, typename T>
AttentionWeights<U> convert(const AttentionWeights<T>& a) {
  return {convert<U>(a.wq), convert<U>(a.wk), convert<U>(a.wv), convert<U>(a.wo)};
}
template <typename U, typename T>
LayerNormWeights<U> convert(const LayerNormWeights<T>& n) {
  return {convert<U>(n.gain), convert<U>(n.bias)};
}
template <typename U, typename T>
FeedForwardWeights<U> convert(const FeedForwardWeights<T>& f) {
  return {convert<U>(f.w1), convert<U>(f.b1), convert<U>(f.w2), convert<U>(f.b2)};
}

}  // namespace

template <typename T>
W2TParams<T> W2TParams<T>::init(const W2TConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  W2TParams p;
  p.config = c;
  p.word_embed = gaussian<T>(c.vocab_size, c.word_dim, c.init_std, rng);
  p.align_w = gaussian<T>(c.word_dim, c.hidden, c.init_std, rng);
  p.align_b = filled<T>(1, c.hidden, T(0));
  p.text_pos = gaussian<T>(c.max_text(), c.hidden, c.init_std, rng);
  if (c.has_bag_projection()) {
    p.bag_proj_w = gaussian<T>(c.bag_dim, c.hidden, c.init_std, rng);
    p.bag_proj_b = filled<T>(1, c.hidden, T(0));
  }
  for (std::size_t i = 0; i < c.enc_layers; ++i) {
    EncoderLayer<T> layer;
    layer.self_attn = init_attention<T>(c, rng);
    layer.norm1 = init_norm<T>(c);
    layer.ffn = init_ffn<T>(c, rng);
    layer.norm2 = init_norm<T>(c);
    p.encoder.push_back(std::move(layer));
  }
  for (std::size_t i = 0; i < c.dec_layers; ++i) {
    DecoderLayer<T> layer;
    layer.self_attn = init_attention<T>(c, rng);
    layer.norm1 = init_norm<T>(c);
    layer.co_attn = init_attention<T>(c, rng);
    layer.norm2 = init_norm<T>(c);
    layer.ffn = init_ffn<T>(c, rng);
    layer.norm3 = init_norm<T>(c);
    p.decoder.push_back(std::move(layer));
  }
  p.out_w = c.zero_output_init ? filled<T>(c.hidden, c.vocab_size, T(0))
                               : gaussian<T>(c.hidden, c.vocab_size, c.init_std, rng);
  p.out_b = filled<T>(1, c.vocab_size, T(0));
  return p;
}

template <typename T>
std::vector<NamedTensor<T>> W2TParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  visit_params(*this, [&](const std::string& name, const Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
void W2TParams<T>::zero_grad() const {
  visit_params(*this, [](const std::string&, const Tensor<T>& t) { Tensor<T>(t).zero_grad(); });
}

template <typename T>
template <typename U>
W2TParams<U> W2TParams<T>::cast() const {
  W2TParams<U> p;
  p.config = config;
  p.word_embed = convert<U>(word_embed);
  p.align_w = convert<U>(align_w);
  p.align_b = convert<U>(align_b);
  p.text_pos = convert<U>(text_pos);
  p.bag_proj_w = convert<U>(bag_proj_w);
  p.bag_proj_b = convert<U>(bag_proj_b);
  for (const auto& l : encoder)
    p.encoder.push_back({convert<U>(l.self_attn), convert<U>(l.norm1), convert<U>(l.ffn), convert<U>(l.norm2)});
  for (const auto& l : decoder)
    p.decoder.push_back({convert<U>(l.self_attn), convert<U>(l.norm1), convert<U>(l.co_attn),
                         convert<U>(l.norm2), convert<U>(l.ffn), convert<U>(l.norm3)});
  p.out_w = convert<U>(out_w);
  p.out_b = convert<U>(out_b);
  return p;
}

template <typename T>
std::uint64_t W2TParams<T>::checksum() const {
  std::uint64_t h = fnv1a64(nullptr, 0);
  visit_params(*this, [&](const std::string&, const Tensor<T>& t) {
    h = fnv1a64(t.data().data(), t.size() * sizeof(T), h);
  });
  return h;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

template <typename T>
void capture(std::vector<AttentionRecord>* records, AttentionKind kind, std::size_t layer,
             std::size_t head, const Tensor<T>& a) {
  if (!records) return;
  AttentionRecord rec;
  rec.kind = kind;
  rec.layer = layer;
  rec.head = head;
  rec.rows = a.rows();
  rec.cols = a.cols();
  rec.weights.assign(a.data().begin(), a.data().end());
  records->push_back(std::move(rec));
}

// Multi-head scaled dot-product attention: queries from `from`, keys and
// values from `to`, heads concatenated and projected by W_O.
template <typename T>
Tensor<T> attention(const Tensor<T>& from, const Tensor<T>& to, const AttentionWeights<T>& w,
                    const W2TConfig& c, bool causal, AttentionKind kind, std::size_t layer,
                    std::vector<AttentionRecord>* records) {
  const Tensor<T> q = ad::matmul(from, w.wq);
  const Tensor<T> k = ad::matmul(to, w.wk);
  const Tensor<T> v = ad::matmul(to, w.wv);
  const std::size_t dh = c.head_dim();
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> heads;
  heads.reserve(c.heads);
  for (std::size_t h = 0; h < c.heads; ++h) {
    const auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    const auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
    const auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
    const auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_d);
    const auto a = ad::softmax_rows(scores, causal);
    capture(records, kind, layer, h, a);
    heads.push_back(ad::matmul(a, vh));
  }
  const auto merged = heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::matmul(merged, w.wo);
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardWeights<T>& f) {
  const auto h = ad::relu(ad::add_row(ad::matmul(x, f.w1), f.b1));
  return ad::add_row(ad::matmul(h, f.w2), f.b2);
}

template <typename T>
Tensor<T> norm(const Tensor<T>& x, const LayerNormWeights<T>& n, const W2TConfig& c) {
  return ad::layer_norm(x, n.gain, n.bias, static_cast<T>(c.ln_eps));
}

}  // namespace

template <typename T>
Tensor<T> bag_tensor(const EmbeddingBag& bag) {
  bag.validate();
  return Tensor<T>::from(bag.size, bag.width, std::vector<T>(bag.embeddings.begin(), bag.embeddings.end()));
}

template <typename T>
Tensor<T> encode_bag(const EmbeddingBag& bag, const W2TParams<T>& p, std::vector<AttentionRecord>* records) {
  const W2TConfig& c = p.config;
  if (bag.width != c.bag_dim)
    throw Error(ErrorCode::kShapeMismatch, "bag width " + std::to_string(bag.width) +
                                               " != configured bag_dim " + std::to_string(c.bag_dim));
  if (bag.size > c.max_bag)
    throw Error(ErrorCode::kShapeMismatch, "bag of " + std::to_string(bag.size) + " patches exceeds max_bag");
  Tensor<T> x = bag_tensor<T>(bag);
  if (c.has_bag_projection()) x = ad::add_row(ad::matmul(x, p.bag_proj_w), p.bag_proj_b);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const auto& layer = p.encoder[i];
    x = norm(ad::add(x, attention(x, x, layer.self_attn, c, false, AttentionKind::kEncoderSelf, i, records)),
             layer.norm1, c);
    x = norm(ad::add(x, feed_forward(x, layer.ffn)), layer.norm2, c);
  }
  return x;
}

template <typename T>
Tensor<T> decode_all(const Tensor<T>& memory, std::span<const TokenId> tokens, const W2TParams<T>& p,
                     std::vector<AttentionRecord>* records) {
  const W2TConfig& c = p.config;
  if (tokens.empty()) throw Error(ErrorCode::kShapeMismatch, "empty decoder input");
  if (tokens.size() > c.max_text())
    throw Error(ErrorCode::kPrefixTooLong, std::to_string(tokens.size()) + " tokens > max_text " +
                                               std::to_string(c.max_text()));
  if (memory.cols() != c.hidden)
    throw Error(ErrorCode::kShapeMismatch, "memory width does not match hidden size");
  const auto words = ad::embedding_lookup(p.word_embed, tokens);
  const auto aligned = ad::add_row(ad::matmul(words, p.align_w), p.align_b);
  Tensor<T> x = ad::add(aligned, ad::slice_rows(p.text_pos, 0, tokens.size()));
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const auto& layer = p.decoder[i];
    x = norm(ad::add(x, attention(x, x, layer.self_attn, c, true, AttentionKind::kDecoderSelf, i, records)),
             layer.norm1, c);
    x = norm(ad::add(x, attention(x, memory, layer.co_attn, c, false, AttentionKind::kCoAttention, i, records)),
             layer.norm2, c);
    x = norm(ad::add(x, feed_forward(x, layer.ffn)), layer.norm3, c);
  }
  return ad::add_row(ad::matmul(x, p.out_w), p.out_b);
}

template <typename T>
StepOutput<T> decode_step(const Tensor<T>& memory, std::span<const TokenId> prefix, const W2TParams<T>& p,
                          bool capture_attention) {
  std::vector<AttentionRecord> all;
  const auto logits = decode_all(memory, prefix, p, capture_attention ? &all : nullptr);
  StepOutput<T> out;
  const std::size_t v = logits.cols();
  const auto last = logits.data().subspan((logits.rows() - 1) * v, v);
  out.logits.assign(last.begin(), last.end());
  for (auto& r : all) {
    if (r.kind == AttentionKind::kCoAttention) out.records.push_back(std::move(r));
  }
  return out;
}

TeacherForcing teacher_forcing(std::span<const TokenId> question, std::span<const TokenId> answer) {
  if (answer.empty()) throw Error(ErrorCode::kInvalidArgument, "answer must contain at least EOS");
  TeacherForcing tf;
  tf.inputs.assign(question.begin(), question.end());
  tf.inputs.push_back(kBos);
  tf.inputs.insert(tf.inputs.end(), answer.begin(), answer.end() - 1);
  tf.targets.assign(question.size(), kPad);
  tf.targets.insert(tf.targets.end(), answer.begin(), answer.end());
  return tf;
}

template <typename T>
Tensor<T> forward_nll(const EmbeddingBag& bag, std::span<const TokenId> question, std::span<const TokenId> answer,
                      const W2TParams<T>& p) {
  if (question.size() > p.config.max_question)
    throw Error(ErrorCode::kPrefixTooLong, "question of " + std::to_string(question.size()) + " tokens");
  if (answer.size() > p.config.max_answer)
    throw Error(ErrorCode::kPrefixTooLong, "answer of " + std::to_string(answer.size()) + " tokens");
  const auto tf = teacher_forcing(question, answer);
  const auto memory = encode_bag(bag, p);
  const auto logits = decode_all(memory, tf.inputs, p);
  return ad::nll_loss(logits, std::span<const TokenId>(tf.targets), kPad);
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string blob;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.params.named()) {
    table.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", blob.size()}});
    blob.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  nlohmann::json header = {{"format", "w2t-checkpoint"},
                           {"version", 1},
                           {"config", ckpt.params.config.to_json()},
                           {"vocab_hash", ckpt.vocab.hash()},
                           {"step", ckpt.step},
                           {"dtype", "float32-le"},
                           {"tensors", table},
                           {"param_checksum", ckpt.params.checksum()},
                           {"extra", ckpt.extra}};
  write_file_atomic(dir / "params.bin", blob);
  ckpt.vocab.save(dir / "vocab.json");
  write_json(dir / "checkpoint.json", header);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto header = read_json(dir / "checkpoint.json");
  Checkpoint ckpt;
  try {
    ckpt.vocab = Vocab::load(dir / "vocab.json");
    if (header.at("vocab_hash").get<std::uint64_t>() != ckpt.vocab.hash())
      throw Error(ErrorCode::kFormatError, "vocab.json does not match the checkpoint's vocab hash");
    const auto config = W2TConfig::from_json(header.at("config"));
    if (config.vocab_size != ckpt.vocab.size())
      throw Error(ErrorCode::kFormatError, "config vocab_size != vocab size");
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.extra = header.value("extra", nlohmann::json::object());
    ckpt.params = W2TParams<float>::init(config, 0);
    const std::string blob = read_file(dir / "params.bin");
    const auto& table = header.at("tensors");
    auto named = ckpt.params.named();
    if (table.size() != named.size())
      throw Error(ErrorCode::kFormatError, "tensor count mismatch: file has " + std::to_string(table.size()) +
                                               ", config implies " + std::to_string(named.size()));
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, t] = named[i];
      const auto& entry = table[i];
      if (entry.at("name").get<std::string>() != name || entry.at("rows").get<std::size_t>() != t.rows() ||
          entry.at("cols").get<std::size_t>() != t.cols())
        throw Error(ErrorCode::kFormatError, "tensor '" + name + "' shape/order mismatch");
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t bytes = t.size() * sizeof(float);
      if (offset != expected_offset || offset + bytes > blob.size())
        throw Error(ErrorCode::kFormatError, "tensor '" + name + "' outside params.bin");
      auto dst = t.mutable_data();
      std::memcpy(dst.data(), blob.data() + offset, bytes);
      for (float v : dst) {
        if (!std::isfinite(v)) throw Error(ErrorCode::kNonFiniteValue, "checkpoint tensor '" + name + "'");
      }
      expected_offset += bytes;
    }
    if (expected_offset != blob.size()) throw Error(ErrorCode::kFormatError, "trailing bytes in params.bin");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("checkpoint header: ") + e.what());
  }
  return ckpt;
}

template struct W2TParams<float>;
template struct W2TParams<double>;
template W2TParams<double> W2TParams<float>::cast<double>() const;
template W2TParams<float> W2TParams<double>::cast<float>() const;
template W2TParams<float> W2TParams<float>::cast<float>() const;

#define W2T_INSTANTIATE(T)                                                                                   \
  template Tensor<T> bag_tensor<T>(const EmbeddingBag&);                                                    \
  template Tensor<T> encode_bag<T>(const EmbeddingBag&, const W2TParams<T>&, std::vector<AttentionRecord>*); \
  template Tensor<T> decode_all<T>(const Tensor<T>&, std::span<const TokenId>, const W2TParams<T>&,          \
                                   std::vector<AttentionRecord>*);                                           \
  template StepOutput<T> decode_step<T>(const Tensor<T>&, std::span<const TokenId>, const W2TParams<T>&, bool); \
  template Tensor<T> forward_nll<T>(const EmbeddingBag&, std::span<const TokenId>, std::span<const TokenId>,  \
                                    const W2TParams<T>&);

W2T_INSTANTIATE(float)
W2T_INSTANTIATE(double)

#undef W2T_INSTANTIATE

}  // namespace w2t
