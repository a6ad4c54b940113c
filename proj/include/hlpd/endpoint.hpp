#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "hlpd/error.hpp"
#include "json.hpp"

namespace hlpd {

struct ChatMessage {
  std::string role;
  std::string content;
};

// A chat-completion call. `hints` never go on the wire; the offline mock reads
// them to produce deterministic output.
struct ChatRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  nlohmann::json hints = nlohmann::json::object();
};

inline nlohmann::json wire_body(const ChatRequest& r) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : r.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", r.model}, {"messages", messages}};
}

class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual std::string id() const = 0;
  virtual bool is_mock() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::seconds(1), std::chrono::seconds(2),
                                                 std::chrono::seconds(4)};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

// One initial call plus one retry per backoff entry, for retryable errors only.
inline std::string complete_with_retry(ChatEndpoint& endpoint, const ChatRequest& request, const RetryPolicy& policy,
                                       const Sleeper& sleep, int* attempts = nullptr) {
  for (std::size_t attempt = 0;; ++attempt) {
    if (attempts) *attempts = static_cast<int>(attempt + 1);
    try {
      return endpoint.complete(request);
    } catch (const EndpointError& e) {
      if (!e.retryable() || attempt >= policy.backoff.size()) throw;
      sleep(policy.backoff[attempt]);
    }
  }
}

// Registry entry: model id -> base URL -> name of the env var holding the token.
struct EndpointConfig {
  std::string id;
  std::string base_url;
  std::string model;
  std::string token_env;
  int timeout_s = 60;
};

inline std::map<std::string, EndpointConfig> parse_registry(const nlohmann::json& j) {
  std::map<std::string, EndpointConfig> out;
  for (const auto& e : j.at("endpoints")) {
    EndpointConfig c{e.at("id").get<std::string>(), e.at("base_url").get<std::string>(),
                     e.value("model", e.at("id").get<std::string>()), e.at("token_env").get<std::string>(),
                     e.value("timeout_s", 60)};
    if (c.id.empty() || c.base_url.empty()) throw InvalidConfig("registry entries need an id and a base_url");
    out[c.id] = c;
  }
  return out;
}

inline std::map<std::string, EndpointConfig> load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read endpoint registry " + path.string());
  try {
    return parse_registry(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("endpoint registry " + path.string() + ": " + e.what());
  }
}

// Set by mock mode; any real transport refuses to run while it is on.
inline std::atomic<bool>& network_forbidden() {
  static std::atomic<bool> flag{false};
  return flag;
}

struct HttpPost {
  std::string url;
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  int timeout_s = 60;
};

struct HttpReply {
  int status = 0;  // 0 when no response arrived
  std::string body;
  std::string error;
};

using Transport = std::function<HttpReply(const HttpPost&)>;

// POST {base}/chat/completions and read choices[0].message.content.
class HttpChatEndpoint final : public ChatEndpoint {
 public:
  HttpChatEndpoint(EndpointConfig config, Transport transport)
      : config_(std::move(config)), transport_(std::move(transport)) {}

  std::string id() const override { return config_.id; }
  bool is_mock() const override { return false; }

  std::string complete(const ChatRequest& request) override {
    if (network_forbidden()) throw EndpointError("network access is disabled in mock mode", false);
    HttpPost post;
    post.url = config_.base_url;
    while (!post.url.empty() && post.url.back() == '/') post.url.pop_back();
    post.url += "/chat/completions";
    post.headers.emplace_back("Content-Type", "application/json");
    if (!config_.token_env.empty()) {
      const char* token = std::getenv(config_.token_env.c_str());
      if (token == nullptr || *token == '\0') {
        throw EndpointError("environment variable " + config_.token_env + " is not set", false);
      }
      post.headers.emplace_back("Authorization", std::string("Bearer ") + token);
    }
    ChatRequest wire = request;
    if (wire.model.empty()) wire.model = config_.model;
    post.body = wire_body(wire).dump();
    post.timeout_s = config_.timeout_s;

    const HttpReply reply = transport_(post);
    if (reply.status == 0) throw EndpointError(config_.id + ": transport failure: " + reply.error, true);
    if (reply.status == 429 || reply.status >= 500) {
      throw EndpointError(config_.id + ": HTTP " + std::to_string(reply.status), true);
    }
    if (reply.status != 200) throw EndpointError(config_.id + ": HTTP " + std::to_string(reply.status), false);
    std::string content;
    try {
      content = nlohmann::json::parse(reply.body).at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw EndpointError(config_.id + ": unexpected response shape: " + e.what(), false);
    }
    if (content.empty()) throw EmptyCompletion(config_.id + " returned an empty completion");
    return content;
  }

 private:
  EndpointConfig config_;
  Transport transport_;
};

}  // namespace hlpd
