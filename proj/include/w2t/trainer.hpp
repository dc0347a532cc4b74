#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "w2t/dataset.hpp"
#include "w2t/feature_extractor.hpp"
#include "w2t/model.hpp"

namespace w2t {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t max_steps = 3000;
  std::size_t batch_size = 1;  // samples accumulated per optimizer step
  std::uint64_t seed = 17;
  std::size_t eval_every = 100;
  bool template_resampling = true;
  // Stop at an eval point once the full-train-set loss drops below this.
  // 0 disables early stopping.
  double target_loss = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// Decoupled weight decay p -= lr*wd*p, then the bias-corrected Adam update.
// Throws NonFiniteGradient without touching parameters or state.
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state, const TrainConfig& cfg);

using BagStore = std::map<std::string, EmbeddingBag>;

BagStore load_bag_dir(const std::filesystem::path& dir);

struct EncodedSample {
  std::string slide_id;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;  // ends with EOS
};

EncodedSample encode_sample(const QASample& s, const Vocab& vocab);

struct LossPoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> full_train_loss;
};

struct TrainResult {
  Checkpoint best;  // lowest validation loss (final parameters without a validation set)
  W2TParams<float> final_params;
  std::vector<LossPoint> curve;
  std::size_t steps_run = 0;
  std::size_t skipped_steps = 0;  // non-finite gradients
  double final_train_loss = 0.0;  // mean NLL over the training set at the end
  std::optional<double> best_val_loss;
};

struct TrainInputs {
  const std::vector<QASample>* train = nullptr;
  const std::vector<QASample>* val = nullptr;  // optional
  const BagStore* bags = nullptr;
  const Vocab* vocab = nullptr;
  const std::vector<QaTemplate>* templates = nullptr;  // optional, for resampling
  std::function<void(const LossPoint&)> on_eval;  // optional progress hook
};

// Mean teacher-forced NLL over the samples; never records a graph.
double mean_loss(const std::vector<EncodedSample>& samples, const BagStore& bags, const W2TParams<float>& params);

TrainResult train(const TrainInputs& in, const TrainConfig& cfg, const W2TConfig& model_cfg);

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

}  // namespace w2t
