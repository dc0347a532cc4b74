#include "w2t/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "w2t/error.hpp"
#include "w2t/io.hpp"
#include "w2t/random.hpp"

namespace w2t {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(eps > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "lr/weight_decay must be >= 0 and eps > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error(ErrorCode::kInvalidArgument, "Adam betas must lie in [0,1)");
  if (batch_size == 0 || eval_every == 0)
    throw Error(ErrorCode::kInvalidArgument, "batch_size and eval_every must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"max_steps", max_steps},
          {"batch_size", batch_size},
          {"seed", seed},
          {"eval_every", eval_every},
          {"template_resampling", template_resampling},
          {"target_loss", target_loss}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.template_resampling = j.value("template_resampling", c.template_resampling);
  c.target_loss = j.value("target_loss", c.target_loss);
  return c;
}

template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, AdamState<T>& state, const TrainConfig& cfg) {
  for (auto& [name, t] : params) {
    for (const T g : t.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorCode::kNonFiniteGradient, "gradient of '" + name + "'");
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (auto& p : params) {
      state.m.emplace_back(p.tensor.size(), T(0));
      state.v.emplace_back(p.tensor.size(), T(0));
    }
  }
  ++state.step;
  const T lr = static_cast<T>(cfg.lr);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eps = static_cast<T>(cfg.eps);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].tensor.mutable_data();
    const auto grad = params[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const T g = grad.empty() ? T(0) : grad[k];
      value[k] *= decay;
      m[k] = b1 * m[k] + (T(1) - b1) * g;
      v[k] = b2 * v[k] + (T(1) - b2) * g * g;
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      value[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(std::vector<NamedTensor<float>>&, AdamState<float>&, const TrainConfig&);
template void adam_step<double>(std::vector<NamedTensor<double>>&, AdamState<double>&, const TrainConfig&);

BagStore load_bag_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIoError, "no bag directory " + dir.string());
  BagStore out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() != ".w2tb") continue;
    auto bag = import_bag(e.path());
    out.emplace(bag.slide_id, std::move(bag));
  }
  return out;
}

EncodedSample encode_sample(const QASample& s, const Vocab& vocab) {
  return {s.slide_id, encode(s.question, vocab, SeqRole::kQuestion).ids,
          encode(s.answer, vocab, SeqRole::kAnswer).ids};
}

double mean_loss(const std::vector<EncodedSample>& samples, const BagStore& bags, const W2TParams<float>& params) {
  if (samples.empty()) return 0.0;
  ad::NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& s : samples) {
    const auto it = bags.find(s.slide_id);
    if (it == bags.end()) throw Error(ErrorCode::kMissingBag, "no bag for slide '" + s.slide_id + "'");
    total += forward_nll<float>(it->second, s.question, s.answer, params).item();
  }
  return total / static_cast<double>(samples.size());
}

namespace {

std::vector<EncodedSample> encode_all(const std::vector<QASample>& samples, const Vocab& vocab, const BagStore& bags,
                                      const W2TConfig& mc) {
  std::vector<EncodedSample> out;
  for (const auto& s : samples) {
    if (!bags.count(s.slide_id)) throw Error(ErrorCode::kMissingBag, "no bag for slide '" + s.slide_id + "'");
    auto e = encode_sample(s, vocab);
    if (e.question.size() > mc.max_question || e.answer.size() > mc.max_answer)
      throw Error(ErrorCode::kPrefixTooLong, "sample on '" + s.slide_id + "' exceeds configured lengths");
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TrainResult train(const TrainInputs& in, const TrainConfig& cfg, const W2TConfig& model_cfg) {
  cfg.validate();
  if (!in.train || in.train->empty()) throw Error(ErrorCode::kEmptyDataset, "no training samples");
  if (!in.bags || !in.vocab) throw Error(ErrorCode::kInvalidArgument, "bags and vocab are required");
  const auto& bags = *in.bags;
  const auto& vocab = *in.vocab;

  const auto train_set = encode_all(*in.train, vocab, bags, model_cfg);
  const auto val_set = in.val ? encode_all(*in.val, vocab, bags, model_cfg) : std::vector<EncodedSample>{};
  const bool resample = cfg.template_resampling && in.templates && !in.templates->empty();

  // Encoded question for every (sample, template) pair, so resampling
  // never re-tokenizes inside the loop.
  std::vector<std::vector<std::vector<TokenId>>> variants(train_set.size());
  if (resample) {
    for (std::size_t i = 0; i < train_set.size(); ++i) {
      const auto& s = (*in.train)[i];
      if (s.subset != Subset::kOpen || !s.entity_key) continue;
      for (const auto& t : *in.templates) {
        auto q = encode(render_question(t, *s.entity_key), vocab, SeqRole::kQuestion).ids;
        if (q.size() > model_cfg.max_question)
          throw Error(ErrorCode::kPrefixTooLong, "template renders a question longer than max_question");
        variants[i].push_back(std::move(q));
      }
    }
  }

  W2TParams<float> params = W2TParams<float>::init(model_cfg, cfg.seed);
  auto named = params.named();
  AdamState<float> adam;
  Rng sampler(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_index = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[sampler.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  std::optional<double> best_val;
  auto snapshot = [&](std::size_t step) {
    return Checkpoint{params.cast<float>(), vocab, step, {{"train_config", cfg.to_json()}}};
  };
  result.best = snapshot(0);

  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    params.zero_grad();
    double step_loss = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const std::size_t i = next_index();
      const auto& s = train_set[i];
      const std::vector<TokenId>* question = &s.question;
      if (!variants[i].empty()) question = &variants[i][sampler.below(variants[i].size())];
      auto loss = forward_nll<float>(bags.at(s.slide_id), *question, s.answer, params);
      if (cfg.batch_size > 1) loss = ad::scale(loss, 1.0f / static_cast<float>(cfg.batch_size));
      step_loss += loss.item();
      ad::backward(loss);
    }
    try {
      adam_step(named, adam, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFiniteGradient) throw;
      ++result.skipped_steps;
    }
    LossPoint point{step, step_loss, std::nullopt, std::nullopt};
    const bool eval_now = step % cfg.eval_every == 0 || step == cfg.max_steps;
    bool stop = false;
    if (eval_now) {
      point.full_train_loss = mean_loss(train_set, bags, params);
      if (!val_set.empty()) {
        point.val_loss = mean_loss(val_set, bags, params);
        if (!best_val || *point.val_loss < *best_val) {
          best_val = point.val_loss;
          result.best = snapshot(step);
        }
      }
      if (in.on_eval) in.on_eval(point);
      stop = cfg.target_loss > 0.0 && *point.full_train_loss < cfg.target_loss;
    }
    result.curve.push_back(point);
    result.steps_run = step;
    if (stop) break;
  }

  result.final_params = params;
  result.final_train_loss = mean_loss(train_set, bags, params);
  result.best_val_loss = best_val;
  if (val_set.empty()) result.best = snapshot(result.steps_run);
  return result;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "step,train_loss,val_loss\n" << std::setprecision(8);
  for (const auto& p : curve) {
    out << p.step << ',' << p.train_loss << ',';
    if (p.val_loss) out << *p.val_loss;
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

}  // namespace w2t
