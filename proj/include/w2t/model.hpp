#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "w2t/autodiff.hpp"
#include "w2t/feature_extractor.hpp"
#include "w2t/text.hpp"

namespace w2t {

struct W2TConfig {
  std::size_t bag_dim = 512;  // width of incoming bag embeddings
  std::size_t hidden = 64;    // l
  std::size_t heads = 4;
  std::size_t word_dim = 64;  // k
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t vocab_size = 0;
  std::size_t max_bag = 100000;
  std::size_t max_question = 32;
  std::size_t max_answer = 32;
  double init_std = 0.02;
  bool zero_output_init = false;
  double ln_eps = 1e-5;

  std::size_t head_dim() const { return hidden / heads; }  // d
  std::size_t ffn_dim() const { return 4 * hidden; }
  // question + BOS + answer (answer includes EOS; the last answer token is
  // never fed back, so one slot is spare).
  std::size_t max_text() const { return max_question + 1 + max_answer; }
  // A projection from bag_dim to hidden exists only when widths differ.
  bool has_bag_projection() const { return bag_dim != hidden; }

  void validate() const;

  // 2 layers, l = 64, 4 heads, k = 64.
  static W2TConfig desk(std::size_t vocab_size, std::size_t bag_dim);
  // 3 layers, l = 512, 4 heads, k = 512.
  static W2TConfig large(std::size_t vocab_size, std::size_t bag_dim);

  nlohmann::json to_json() const;
  static W2TConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct AttentionWeights {
  ad::Tensor<T> wq, wk, wv, wo;  // hidden x hidden, x * W convention
};

template <typename T>
struct LayerNormWeights {
  ad::Tensor<T> gain, bias;  // 1 x hidden
};

template <typename T>
struct FeedForwardWeights {
  ad::Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderLayer {
  AttentionWeights<T> self_attn;
  LayerNormWeights<T> norm1;
  FeedForwardWeights<T> ffn;
  LayerNormWeights<T> norm2;
};

template <typename T>
struct DecoderLayer {
  AttentionWeights<T> self_attn;
  LayerNormWeights<T> norm1;
  AttentionWeights<T> co_attn;
  LayerNormWeights<T> norm2;
  FeedForwardWeights<T> ffn;
  LayerNormWeights<T> norm3;
};

template <typename T>
struct NamedTensor {
  std::string name;
  ad::Tensor<T> tensor;
};

template <typename T>
struct W2TParams {
  W2TConfig config;
  ad::Tensor<T> word_embed;  // V x k
  ad::Tensor<T> align_w;     // k x l (T_l)
  ad::Tensor<T> align_b;     // 1 x l
  ad::Tensor<T> text_pos;    // max_text x l
  ad::Tensor<T> bag_proj_w;  // bag_dim x l, only when has_bag_projection()
  ad::Tensor<T> bag_proj_b;
  std::vector<EncoderLayer<T>> encoder;
  std::vector<DecoderLayer<T>> decoder;
  ad::Tensor<T> out_w;  // l x V
  ad::Tensor<T> out_b;  // 1 x V

  // Gaussian(0, init_std) weights, zero biases, unit layer-norm gains.
  static W2TParams init(const W2TConfig& config, std::uint64_t seed);

  // All trainable tensors in the canonical checkpoint order. The handles
  // share storage with this object.
  std::vector<NamedTensor<T>> named() const;

  void zero_grad() const;

  // Deep copy converted to another precision.
  template <typename U>
  W2TParams<U> cast() const;

  std::uint64_t checksum() const;
};

enum class AttentionKind { kEncoderSelf, kDecoderSelf, kCoAttention };

// One head's attention matrix. Co-attention matrices are T x M.
struct AttentionRecord {
  AttentionKind kind = AttentionKind::kCoAttention;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;  // rows x cols

  double at(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }
};

template <typename T>
ad::Tensor<T> bag_tensor(const EmbeddingBag& bag);

// Transformer encoder over the bag; no positional signal, so permuting
// bag rows permutes the output rows.
template <typename T>
ad::Tensor<T> encode_bag(const EmbeddingBag& bag, const W2TParams<T>& params,
                         std::vector<AttentionRecord>* records = nullptr);

// Logits for every position of the decoder input (tokens.size() x V).
template <typename T>
ad::Tensor<T> decode_all(const ad::Tensor<T>& memory, std::span<const TokenId> tokens,
                         const W2TParams<T>& params, std::vector<AttentionRecord>* records = nullptr);

template <typename T>
struct StepOutput {
  std::vector<T> logits;  // next-token logits, length V
  std::vector<AttentionRecord> records;  // co-attention only, when captured
};

// prefix is the decoder input: question tokens, BOS, answer so far.
template <typename T>
StepOutput<T> decode_step(const ad::Tensor<T>& memory, std::span<const TokenId> prefix,
                          const W2TParams<T>& params, bool capture_attention);

// Decoder input and loss targets for teacher forcing over
// [question | BOS | answer]; question positions are PAD-masked.
struct TeacherForcing {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};
TeacherForcing teacher_forcing(std::span<const TokenId> question, std::span<const TokenId> answer);

template <typename T>
ad::Tensor<T> forward_nll(const EmbeddingBag& bag, std::span<const TokenId> question,
                          std::span<const TokenId> answer, const W2TParams<T>& params);

// Checkpoint directory: checkpoint.json (config, vocab hash, step, tensor
// table) + params.bin (float32 little-endian, canonical order) + vocab.json.
struct Checkpoint {
  W2TParams<float> params;
  Vocab vocab;
  std::size_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace w2t
