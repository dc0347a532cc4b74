#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "w2t/dataset.hpp"
#include "w2t/error.hpp"

namespace w2t {

std::string HttpLlmClient::complete(const LlmRequest& request) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(opts_.endpoint, m, url))
    throw Error(ErrorCode::kInvalidArgument, "LLM endpoint must be an http(s) URL: " + opts_.endpoint);
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/v1/chat/completions";

  httplib::Client cli(base);
  cli.set_read_timeout(opts_.timeout_s, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(opts_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const nlohmann::json body = {{"model", opts_.model},
                               {"temperature", 0},
                               {"messages", {{{"role", "user"}, {"content", request.prompt}}}}};
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::kIoError, "LLM request failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::kIoError, "LLM endpoint returned HTTP " + std::to_string(res->status));
  try {
    const auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("LLM response body: ") + e.what());
  }
}

}  // namespace w2t
