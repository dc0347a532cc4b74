#include "w2t/cli.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "w2t/dataset.hpp"
#include "w2t/error.hpp"
#include "w2t/feature_extractor.hpp"
#include "w2t/inference.hpp"
#include "w2t/io.hpp"
#include "w2t/metrics.hpp"
#include "w2t/service.hpp"
#include "w2t/slide_tiler.hpp"
#include "w2t/synthetic.hpp"
#include "w2t/trainer.hpp"

namespace fs = std::filesystem;

namespace w2t {

namespace {

struct TileArgs {
  fs::path image, out;
  int patch = 256;
  double sat = 0.05;
  double keep = 0.5;
};

struct ExtractArgs {
  fs::path image, tiles, out;
  std::size_t dim = 512;
  std::uint64_t seed = 17;
};

struct VocabArgs {
  std::vector<fs::path> data;
  fs::path templates, out;
  int min_count = 1;
};

struct BuildArgs {
  fs::path clinical, captions, templates, fixtures, out;
  std::string llm = "offline";
  std::string endpoint, model = "gpt-3.5-turbo";
  std::uint64_t seed = 7;
  std::string split_mode = "quota";
};

struct TrainArgs {
  fs::path data, val, bags, vocab, templates, model_config, train_config, out, loss_csv;
  std::size_t steps = 3000;
  std::size_t eval_every = 100;
  std::size_t batch = 1;
  double lr = 1e-4;
  double wd = 5e-5;
  double target_loss = 0.0;
  std::uint64_t seed = 17;
  bool no_resample = false;
  std::set<std::string> given;  // flags set explicitly on the command line
};

struct EvalArgs {
  fs::path ckpt, data, bags, lexicon, out;
  std::size_t beam = 3;
};

struct AskArgs {
  fs::path ckpt, bag, heatmap, image, tiles, overlay, out;
  std::string question, keyword, policy = "last-layer-mean";
  std::size_t beam = 1;
};

struct ServeArgs {
  fs::path ckpt, bags, thumbnails, static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t beam = 1;
  std::size_t sessions = 256;
};

struct SynthArgs {
  fs::path out;
  std::size_t n = 8;
  std::uint64_t seed = 7;
  int size = 512;
  std::string prefix = "s";
};

int run_tile(const TileArgs& a) {
  const auto img = read_image(a.image);
  const auto tiles = tile(img, TileOptions{a.patch, a.sat, a.keep});
  save_tileset(tiles, a.out);
  std::printf("%s: %zu patches kept\n", tiles.slide_id.c_str(), tiles.patches.size());
  return 0;
}

int run_extract(const ExtractArgs& a) {
  const auto img = read_image(a.image);
  const auto tiles = load_tileset(a.tiles);
  auto bag = extract_builtin(img, tiles, a.dim, a.seed);
  export_bag(bag, a.out);
  std::printf("%s: bag %zu x %zu (%s)\n", bag.slide_id.c_str(), bag.size, bag.width, bag.extractor_tag.c_str());
  return 0;
}

int run_vocab(const VocabArgs& a) {
  std::vector<QASample> samples;
  for (const auto& p : a.data) {
    auto part = read_jsonl(p);
    samples.insert(samples.end(), part.begin(), part.end());
  }
  std::vector<QaTemplate> templates;
  if (!a.templates.empty()) templates = load_templates(a.templates);
  const auto corpus = vocabulary_corpus(samples, templates);
  const auto v = Vocab::build(corpus, a.min_count);
  v.save(a.out);
  std::printf("vocab: %zu tokens\n", v.size());
  return 0;
}

int run_build(const BuildArgs& a) {
  const auto records = read_clinical_tsv(a.clinical);
  const auto templates = load_templates(a.templates);
  std::unique_ptr<LlmClient> llm;
  if (a.llm == "offline") {
    if (a.fixtures.empty()) throw CLI::ValidationError("--fixtures", "required with --llm offline");
    llm = std::make_unique<OfflineFixtureClient>(a.fixtures);
  } else {
    if (a.endpoint.empty()) throw CLI::ValidationError("--endpoint", "required with --llm http");
    llm = std::make_unique<HttpLlmClient>(HttpLlmClient::Options{a.endpoint, a.model});
  }
  BuildOptions opts;
  opts.seed = a.seed;
  opts.split_mode = a.split_mode == "hash" ? SplitMode::kHashBucket : SplitMode::kQuota;
  const auto res = build_dataset(records, a.captions, templates, llm.get(), opts);
  write_build(res, a.out);
  for (const auto& d : res.parse_diagnostics) std::fprintf(stderr, "skipped: %s\n", d.c_str());
  std::printf("pairs: %zu open + %zu closed, kept %zu, rejected %zu\n", res.open_raw.size(), res.closed_raw.size(),
              res.filtered.kept.size(), res.filtered.rejected.size());
  std::printf("split slides: %zu/%zu/%zu, pairs: %zu/%zu/%zu\n", res.manifest.train.size(), res.manifest.val.size(),
              res.manifest.test.size(), res.manifest.train_pairs, res.manifest.val_pairs, res.manifest.test_pairs);
  return 0;
}

int run_train(const TrainArgs& a) {
  const auto train_set = read_jsonl(a.data);
  std::vector<QASample> val_set;
  if (!a.val.empty()) val_set = read_jsonl(a.val);
  const auto bags = load_bag_dir(a.bags);
  if (bags.empty()) throw Error(ErrorCode::kMissingBag, "no bags in " + a.bags.string());
  const auto vocab = Vocab::load(a.vocab);
  std::vector<QaTemplate> templates;
  if (!a.templates.empty()) templates = load_templates(a.templates);

  W2TConfig mc = W2TConfig::desk(vocab.size(), bags.begin()->second.width);
  if (!a.model_config.empty()) {
    auto j = read_json(a.model_config);
    j["vocab_size"] = vocab.size();
    if (!j.contains("bag_dim")) j["bag_dim"] = bags.begin()->second.width;
    mc = W2TConfig::from_json(j);
  }
  TrainConfig tc;
  if (!a.train_config.empty()) tc = TrainConfig::from_json(read_json(a.train_config));
  if (a.given.count("--steps") || a.train_config.empty()) tc.max_steps = a.steps;
  if (a.given.count("--eval-every") || a.train_config.empty()) tc.eval_every = a.eval_every;
  if (a.given.count("--batch") || a.train_config.empty()) tc.batch_size = a.batch;
  if (a.given.count("--lr") || a.train_config.empty()) tc.lr = a.lr;
  if (a.given.count("--wd") || a.train_config.empty()) tc.weight_decay = a.wd;
  if (a.given.count("--seed") || a.train_config.empty()) tc.seed = a.seed;
  if (a.given.count("--target-loss") || a.train_config.empty()) tc.target_loss = a.target_loss;
  if (a.no_resample) tc.template_resampling = false;

  TrainInputs in;
  in.train = &train_set;
  in.val = val_set.empty() ? nullptr : &val_set;
  in.bags = &bags;
  in.vocab = &vocab;
  in.templates = templates.empty() ? nullptr : &templates;
  in.on_eval = [](const LossPoint& p) {
    std::fprintf(stderr, "step %zu train %.5f full %.5f", p.step, p.train_loss, p.full_train_loss.value_or(0.0));
    if (p.val_loss) std::fprintf(stderr, " val %.5f", *p.val_loss);
    std::fprintf(stderr, "\n");
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto res = train(in, tc, mc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.best.extra["final_train_loss"] = res.final_train_loss;
  res.best.extra["steps_run"] = res.steps_run;
  save_checkpoint(res.best, a.out);
  write_loss_csv(res.curve, a.loss_csv.empty() ? a.out / "loss.csv" : a.loss_csv);
  std::printf("trained %zu steps in %.1fs, final train loss %.5f, checkpoint step %zu\n", res.steps_run, secs,
              res.final_train_loss, res.best.step);
  return 0;
}

int run_eval(const EvalArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  const auto samples = read_jsonl(a.data);
  const auto bags = load_bag_dir(a.bags);
  const auto lex = EntityLexicon::load(a.lexicon);
  EvalOptions opts;
  opts.beam_width = a.beam;
  const auto rep = evaluate(ckpt, samples, bags, lex, opts);
  write_json(a.out, rep.to_json());
  std::printf("evaluated %zu/%zu  BLEU-1 %.2f  BLEU-4 %.2f  METEOR %.2f  ROUGE-L %.2f  ACC %.2f  Fact_ent %.2f\n",
              rep.evaluated, rep.total, 100 * rep.bleu1, 100 * rep.bleu4, 100 * rep.meteor, 100 * rep.rouge_l,
              100 * rep.acc, 100 * rep.fact_ent);
  return 0;
}

int run_ask(const AskArgs& a) {
  const auto ckpt = load_checkpoint(a.ckpt);
  const auto bag = import_bag(a.bag);
  const auto q = encode(a.question, ckpt.vocab, SeqRole::kQuestion).ids;
  const std::size_t max_len = ckpt.params.config.max_answer;
  const Answer ans = a.beam <= 1 ? generate_greedy(bag, q, ckpt.params, ckpt.vocab, max_len)
                                 : generate_beam(bag, q, ckpt.params, ckpt.vocab, a.beam, max_len).front();
  nlohmann::json out = {{"slide_id", bag.slide_id},
                        {"question", a.question},
                        {"answer", ans.text},
                        {"log_prob", ans.generation.log_prob},
                        {"truncated", ans.generation.truncated}};
  if (!a.keyword.empty()) {
    const auto hm = keyword_attention(ans.records, q, a.keyword, ckpt.vocab, bag, AttentionPolicy::parse(a.policy));
    if (!a.heatmap.empty()) write_json(a.heatmap, hm.to_json());
    if (!a.overlay.empty()) {
      if (a.image.empty() || a.tiles.empty()) throw CLI::ValidationError("--overlay", "needs --image and --tiles");
      const auto raster = render_heatmap(hm, load_tileset(a.tiles), read_image(a.image));
      write_image(raster.overlay, a.overlay);
    }
    out["heatmap"] = hm.to_json();
  }
  if (!a.out.empty()) write_json(a.out, out);
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_serve(const ServeArgs& a) {
  ServiceConfig cfg;
  cfg.ckpt_dir = a.ckpt;
  cfg.bag_dir = a.bags;
  cfg.thumbnail_dir = a.thumbnails;
  cfg.static_dir = a.static_dir;
  cfg.default_beam = a.beam;
  cfg.session_capacity = a.sessions;
  auto service = Service::load(cfg);
  serve(service, a.host, a.port, a.static_dir);
  return 0;
}

int run_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  for (std::size_t i = 1; i <= a.n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%02zu", a.prefix.c_str(), i);
    write_image(make_synthetic_slide(id, a.seed, a.size, a.size), a.out / (std::string(id) + ".png"));
  }
  std::printf("wrote %zu slides to %s\n", a.n, a.out.string().c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"w2t: slide question answering (tile, extract, train, answer, evaluate, serve)", "w2t"};
  app.require_subcommand(1);

  TileArgs tile_a;
  auto* tile_cmd = app.add_subcommand("tile", "Foreground patch grid for one slide image");
  tile_cmd->add_option("--input,--image", tile_a.image, "PNG or PPM slide")->required();
  tile_cmd->add_option("--out", tile_a.out, "TileSet JSON")->required();
  tile_cmd->add_option("--patch-size,--patch", tile_a.patch, "Patch size in pixels")->capture_default_str();
  tile_cmd->add_option("--sat-threshold,--sat", tile_a.sat, "Saturation threshold")->capture_default_str();
  tile_cmd->add_option("--keep-threshold,--keep", tile_a.keep, "Minimum foreground fraction")->capture_default_str();

  ExtractArgs ex_a;
  auto* ex_cmd = app.add_subcommand("extract", "Embedding bag from a tiled slide");
  ex_cmd->add_option("--image", ex_a.image)->required();
  ex_cmd->add_option("--tileset,--tiles", ex_a.tiles)->required();
  ex_cmd->add_option("--out", ex_a.out, "W2TB bag file")->required();
  ex_cmd->add_option("--dim", ex_a.dim, "Embedding width")->capture_default_str();
  ex_cmd->add_option("--seed", ex_a.seed, "Projection seed")->capture_default_str();

  VocabArgs voc_a;
  auto* voc_cmd = app.add_subcommand("vocab", "Word vocabulary from QA JSONL files");
  voc_cmd->add_option("--corpus,--data", voc_a.data, "JSONL corpus (repeatable)")->required();
  voc_cmd->add_option("--templates", voc_a.templates, "Templates JSON to include");
  voc_cmd->add_option("--min-count", voc_a.min_count)->capture_default_str();
  voc_cmd->add_option("--out", voc_a.out)->required();

  BuildArgs b_a;
  auto* b_cmd = app.add_subcommand("build-dataset", "Open and closed QA pairs, filtering, splits, statistics");
  b_cmd->add_option("--clinical", b_a.clinical, "Clinical TSV")->required();
  b_cmd->add_option("--captions", b_a.captions, "Directory of <slide_id>.txt captions")->required();
  b_cmd->add_option("--templates", b_a.templates)->required();
  b_cmd->add_option("--llm", b_a.llm)->check(CLI::IsMember({"offline", "http"}))->capture_default_str();
  b_cmd->add_option("--fixtures", b_a.fixtures, "Canned LLM responses (offline mode)");
  b_cmd->add_option("--endpoint", b_a.endpoint, "Chat-completions URL (http mode)");
  b_cmd->add_option("--model", b_a.model)->capture_default_str();
  b_cmd->add_option("--seed", b_a.seed)->capture_default_str();
  b_cmd->add_option("--split-mode", b_a.split_mode)->check(CLI::IsMember({"quota", "hash"}))->capture_default_str();
  b_cmd->add_option("--out", b_a.out)->required();

  TrainArgs t_a;
  auto* t_cmd = app.add_subcommand("train", "Teacher-forced NLL training");
  t_cmd->add_option("--data", t_a.data, "Training JSONL")->required();
  t_cmd->add_option("--val", t_a.val, "Validation JSONL");
  t_cmd->add_option("--bags", t_a.bags, "Directory of .w2tb bags")->required();
  t_cmd->add_option("--vocab", t_a.vocab)->required();
  t_cmd->add_option("--templates", t_a.templates, "Templates for question resampling");
  t_cmd->add_option("--config", t_a.train_config, "TrainConfig JSON; explicit flags override it");
  t_cmd->add_option("--model-config", t_a.model_config, "W2TConfig JSON (defaults to the desk config)");
  t_cmd->add_option("--steps", t_a.steps)->capture_default_str();
  t_cmd->add_option("--eval-every", t_a.eval_every)->capture_default_str();
  t_cmd->add_option("--batch", t_a.batch)->capture_default_str();
  t_cmd->add_option("--lr", t_a.lr)->capture_default_str();
  t_cmd->add_option("--wd", t_a.wd)->capture_default_str();
  t_cmd->add_option("--target-loss", t_a.target_loss, "Stop once full train loss is below")->capture_default_str();
  t_cmd->add_option("--seed", t_a.seed)->capture_default_str();
  t_cmd->add_flag("--no-resample", t_a.no_resample, "Disable template resampling");
  t_cmd->add_option("--loss-csv", t_a.loss_csv);
  t_cmd->add_option("--out", t_a.out, "Checkpoint directory")->required();

  EvalArgs e_a;
  auto* e_cmd = app.add_subcommand("eval", "NLG, factual-consistency and task metrics");
  e_cmd->add_option("--ckpt", e_a.ckpt)->required();
  e_cmd->add_option("--data", e_a.data)->required();
  e_cmd->add_option("--bags", e_a.bags)->required();
  e_cmd->add_option("--lexicon", e_a.lexicon)->required();
  e_cmd->add_option("--beam", e_a.beam)->capture_default_str();
  e_cmd->add_option("--out", e_a.out)->required();

  AskArgs a_a;
  auto* a_cmd = app.add_subcommand("ask", "Answer one question about one slide");
  a_cmd->add_option("--ckpt", a_a.ckpt)->required();
  a_cmd->add_option("--bag", a_a.bag, "W2TB bag")->required();
  a_cmd->add_option("--question", a_a.question)->required();
  a_cmd->add_option("--beam", a_a.beam, "Beam width (1 = greedy)")->capture_default_str();
  a_cmd->add_option("--heatmap-keyword,--keyword", a_a.keyword, "Question token for the co-attention heatmap");
  a_cmd->add_option("--policy", a_a.policy, "last-layer-mean | layer-<l>-head-<h>")->capture_default_str();
  a_cmd->add_option("--heatmap", a_a.heatmap, "Write heatmap JSON here");
  a_cmd->add_option("--out", a_a.out, "Write the answer JSON here");
  a_cmd->add_option("--image", a_a.image, "Slide image for --overlay");
  a_cmd->add_option("--tiles", a_a.tiles, "TileSet for --overlay");
  a_cmd->add_option("--overlay", a_a.overlay, "Write the blended heatmap image here");

  ServeArgs s_a;
  auto* s_cmd = app.add_subcommand("serve", "HTTP service: /slides /thumbnail /ask /heatmap /history");
  s_cmd->add_option("--ckpt", s_a.ckpt)->required();
  s_cmd->add_option("--bags", s_a.bags)->required();
  s_cmd->add_option("--thumbnails", s_a.thumbnails, "Directory of <slide_id>.png|.ppm");
  s_cmd->add_option("--static", s_a.static_dir, "Web client directory mounted at /");
  s_cmd->add_option("--host", s_a.host)->capture_default_str();
  s_cmd->add_option("--port", s_a.port)->capture_default_str();
  s_cmd->add_option("--beam", s_a.beam, "Default beam width")->capture_default_str();
  s_cmd->add_option("--sessions", s_a.sessions, "Session store capacity")->capture_default_str();

  SynthArgs y_a;
  auto* y_cmd = app.add_subcommand("synth", "Write procedural slide images");
  y_cmd->add_option("--out", y_a.out)->required();
  y_cmd->add_option("--n", y_a.n)->capture_default_str();
  y_cmd->add_option("--seed", y_a.seed)->capture_default_str();
  y_cmd->add_option("--size", y_a.size)->capture_default_str();
  y_cmd->add_option("--prefix", y_a.prefix)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*tile_cmd) return run_tile(tile_a);
    if (*ex_cmd) return run_extract(ex_a);
    if (*voc_cmd) return run_vocab(voc_a);
    if (*b_cmd) return run_build(b_a);
    if (*t_cmd) {
      for (const char* f : {"--steps", "--eval-every", "--batch", "--lr", "--wd", "--seed", "--target-loss"}) {
        if (t_cmd->count(f) > 0) t_a.given.insert(f);
      }
      return run_train(t_a);
    }
    if (*e_cmd) return run_eval(e_a);
    if (*a_cmd) return run_ask(a_a);
    if (*s_cmd) return run_serve(s_a);
    if (*y_cmd) return run_synth(y_a);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace w2t
