#include "w2t/service.hpp"

#include <cstdio>

#include <httplib.h>

#include "w2t/error.hpp"
#include "w2t/slide_tiler.hpp"

namespace w2t {

nlohmann::json SessionEntry::summary() const {
  return {{"qa_id", qa_id},     {"slide_id", slide_id},   {"question", question}, {"answer", answer},
          {"log_prob", log_prob}, {"truncated", truncated}, {"timestamp_ms", timestamp_ms}};
}

SessionStore::SessionStore(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorCode::kInvalidArgument, "session capacity must be positive");
}

std::string SessionStore::put(SessionEntry entry) {
  std::lock_guard lock(mu_);
  char id[32];
  std::snprintf(id, sizeof id, "qa-%06llu", static_cast<unsigned long long>(next_id_++));
  entry.qa_id = id;
  entry.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::system_clock::now().time_since_epoch())
                           .count();
  order_.push_front(std::move(entry));
  index_[order_.front().qa_id] = order_.begin();
  if (order_.size() > capacity_) {
    index_.erase(order_.back().qa_id);
    order_.pop_back();
  }
  return id;
}

std::optional<SessionEntry> SessionStore::get(const std::string& qa_id) {
  std::lock_guard lock(mu_);
  const auto it = index_.find(qa_id);
  if (it == index_.end()) return std::nullopt;
  order_.splice(order_.begin(), order_, it->second);
  return *it->second;
}

std::vector<SessionEntry> SessionStore::list() const {
  std::lock_guard lock(mu_);
  return {order_.begin(), order_.end()};
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return order_.size();
}

// ---------------------------------------------------------------------------

Service::Service(Checkpoint ckpt, BagStore bags, std::map<std::string, SlideImage> thumbnails, ServiceConfig cfg)
    : ckpt_(std::move(ckpt)), bags_(std::move(bags)), cfg_(std::move(cfg)), sessions_(cfg_.session_capacity) {
  for (const auto& [id, bag] : bags_) {
    if (bag.width != ckpt_.params.config.bag_dim)
      throw Error(ErrorCode::kShapeMismatch, "bag " + id + " has width " + std::to_string(bag.width) +
                                                 ", checkpoint expects " + std::to_string(ckpt_.params.config.bag_dim));
  }
  for (const auto& [id, img] : thumbnails) thumbnails_[id] = encode_png(img);
}

Service Service::load(const ServiceConfig& cfg) {
  auto ckpt = load_checkpoint(cfg.ckpt_dir);
  auto bags = load_bag_dir(cfg.bag_dir);
  if (bags.empty()) throw Error(ErrorCode::kEmptyDataset, "no bags in " + cfg.bag_dir.string());
  std::map<std::string, SlideImage> thumbs;
  if (!cfg.thumbnail_dir.empty()) {
    for (const auto& e : std::filesystem::directory_iterator(cfg.thumbnail_dir)) {
      const auto ext = e.path().extension();
      if (ext != ".png" && ext != ".ppm") continue;
      const auto id = e.path().stem().string();
      if (bags.count(id)) thumbs[id] = read_image(e.path());
    }
  }
  return Service(std::move(ckpt), std::move(bags), std::move(thumbs), cfg);
}

nlohmann::json Service::slides() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [id, bag] : bags_) {
    out.push_back({{"slide_id", id},
                   {"thumbnail_url", thumbnails_.count(id) ? nlohmann::json("/thumbnail/" + id) : nlohmann::json()},
                   {"n_patches", bag.size}});
  }
  return out;
}

std::optional<std::vector<std::uint8_t>> Service::thumbnail_png(const std::string& slide_id) const {
  const auto it = thumbnails_.find(slide_id);
  if (it == thumbnails_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Service::ask(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("slide_id") || !body["slide_id"].is_string() ||
      !body.contains("question") || !body["question"].is_string())
    throw HttpError{400, "bad_request", "body must be {slide_id: string, question: string, beam?: int|bool}"};
  const std::string slide_id = body["slide_id"];
  const std::string question = body["question"];
  std::size_t beam = cfg_.default_beam;
  if (body.contains("beam")) {
    const auto& b = body["beam"];
    if (b.is_boolean()) beam = b.get<bool>() ? 3 : 1;
    else if (b.is_number_integer() && b.get<long long>() >= 1 && b.get<long long>() <= 16) beam = b.get<std::size_t>();
    else throw HttpError{400, "bad_request", "beam must be a boolean or an integer in 1..16"};
  }
  const auto bag = bags_.find(slide_id);
  if (bag == bags_.end()) throw HttpError{404, "unknown_slide", "no bag for slide '" + slide_id + "'"};
  const auto q = encode(question, ckpt_.vocab, SeqRole::kQuestion).ids;
  if (q.empty()) throw HttpError{400, "bad_request", "question is empty"};
  const auto& cfg = ckpt_.params.config;
  if (q.size() > cfg.max_question)
    throw HttpError{422, "question_too_long",
                    std::to_string(q.size()) + " tokens, limit " + std::to_string(cfg.max_question)};

  Answer a;
  if (beam == 1) a = generate_greedy(bag->second, q, ckpt_.params, ckpt_.vocab, cfg.max_answer);
  else a = generate_beam(bag->second, q, ckpt_.params, ckpt_.vocab, beam, cfg.max_answer).front();

  SessionEntry e;
  e.slide_id = slide_id;
  e.question = question;
  e.answer = a.text;
  e.log_prob = a.generation.log_prob;
  e.truncated = a.generation.truncated;
  e.question_ids = q;
  e.records = std::make_shared<const std::vector<AttentionRecord>>(std::move(a.records));
  const std::string id = sessions_.put(std::move(e));
  return {{"qa_id", id},
          {"answer", a.text},
          {"log_prob", a.generation.log_prob},
          {"truncated", a.generation.truncated},
          {"beam", beam}};
}

nlohmann::json Service::heatmap(const std::string& qa_id, const std::string& keyword) {
  const auto e = sessions_.get(qa_id);
  if (!e) throw HttpError{404, "unknown_qa_id", "no session entry '" + qa_id + "'"};
  if (keyword.empty()) throw HttpError{400, "bad_request", "keyword query parameter is required"};
  try {
    const auto hm = keyword_attention(*e->records, e->question_ids, keyword, ckpt_.vocab, bags_.at(e->slide_id),
                                      cfg_.policy);
    auto j = hm.to_json();
    j["qa_id"] = qa_id;
    j["keyword"] = keyword;
    return j;
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kKeywordNotFound) throw HttpError{422, "keyword_not_found", err.what()};
    if (err.code() == ErrorCode::kKeywordMultiToken) throw HttpError{422, "keyword_multi_token", err.what()};
    throw;
  }
}

nlohmann::json Service::history() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : sessions_.list()) out.push_back(e.summary());
  return out;
}

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, const HttpError& e) {
  send_json(res, e.status, {{"error", e.code}, {"detail", e.detail}});
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const HttpError& e) {
    send_error(res, e);
  } catch (const nlohmann::json::exception& e) {
    send_error(res, {400, "bad_request", e.what()});
  } catch (const std::exception& e) {
    send_error(res, {500, "internal", e.what()});
  }
}

}  // namespace

void Service::mount(httplib::Server& server) {
  server.Get("/slides", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, slides()); });
  });
  server.Get(R"(/thumbnail/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto png = thumbnail_png(req.matches[1]);
      if (!png) throw HttpError{404, "unknown_slide", "no thumbnail for '" + req.matches[1].str() + "'"};
      res.set_content(std::string(png->begin(), png->end()), "image/png");
    });
  });
  server.Post("/ask", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw HttpError{400, "bad_request", "body is not JSON"};
      send_json(res, 200, ask(body));
    });
  });
  server.Get(R"(/heatmap/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, heatmap(req.matches[1], req.get_param_value("keyword"))); });
  });
  server.Get("/history", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, history()); });
  });
}

void serve(Service& service, const std::string& host, int port, const std::filesystem::path& static_dir) {
  httplib::Server server;
  service.mount(server);
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw Error(ErrorCode::kIoError, "cannot mount " + static_dir.string());
  if (!server.bind_to_port(host, port)) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), port);
  server.listen_after_bind();
}

}  // namespace w2t
