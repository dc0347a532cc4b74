#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "w2t/inference.hpp"
#include "w2t/model.hpp"
#include "w2t/trainer.hpp"

namespace httplib {
class Server;
}

namespace w2t {

struct SessionEntry {
  std::string qa_id;
  std::string slide_id;
  std::string question;
  std::string answer;
  double log_prob = 0.0;
  bool truncated = false;
  std::vector<TokenId> question_ids;
  std::shared_ptr<const std::vector<AttentionRecord>> records;
  std::int64_t timestamp_ms = 0;

  nlohmann::json summary() const;
};

// Bounded LRU keyed by qa_id; get() counts as a use.
class SessionStore {
 public:
  explicit SessionStore(std::size_t capacity = 256);

  std::string put(SessionEntry entry);  // assigns qa_id and timestamp
  std::optional<SessionEntry> get(const std::string& qa_id);
  std::vector<SessionEntry> list() const;  // most recently used first
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex mu_;
  std::size_t capacity_;
  std::uint64_t next_id_ = 1;
  std::list<SessionEntry> order_;
  std::unordered_map<std::string, std::list<SessionEntry>::iterator> index_;
};

struct ServiceConfig {
  std::filesystem::path ckpt_dir;
  std::filesystem::path bag_dir;
  std::filesystem::path thumbnail_dir;  // <slide_id>.png / .ppm, optional
  std::filesystem::path static_dir;     // optional web client
  std::size_t session_capacity = 256;
  std::size_t default_beam = 1;
  AttentionPolicy policy;
};

struct HttpError {
  int status = 500;
  std::string code;
  std::string detail;
};

// Request logic independent of the transport; the HTTP layer only maps
// JSON in and out.
class Service {
 public:
  Service(Checkpoint ckpt, BagStore bags, std::map<std::string, SlideImage> thumbnails, ServiceConfig cfg = {});
  static Service load(const ServiceConfig& cfg);

  nlohmann::json slides() const;
  std::optional<std::vector<std::uint8_t>> thumbnail_png(const std::string& slide_id) const;
  nlohmann::json ask(const nlohmann::json& body);  // throws HttpError
  nlohmann::json heatmap(const std::string& qa_id, const std::string& keyword);
  nlohmann::json history() const;

  std::uint64_t param_checksum() const { return ckpt_.params.checksum(); }
  const Checkpoint& checkpoint() const { return ckpt_; }
  SessionStore& sessions() { return sessions_; }

  void mount(httplib::Server& server);

 private:
  Checkpoint ckpt_;
  BagStore bags_;
  std::map<std::string, std::vector<std::uint8_t>> thumbnails_;
  ServiceConfig cfg_;
  SessionStore sessions_;
};

// Blocks until the server stops.
void serve(Service& service, const std::string& host, int port, const std::filesystem::path& static_dir = {});

}  // namespace w2t
