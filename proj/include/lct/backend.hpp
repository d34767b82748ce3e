#pragma once

// Chat-completions wire protocol and the clients that speak it.
//
//   POST /v1/chat/completions
//   request  {model, messages:[{role, content}], temperature, max_tokens, n}
//   response {choices:[{message:{content}, finish_reason}]}

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "lct/error.hpp"

namespace lct {

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::string model = "default";
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 512;
  int n = 1;

  nlohmann::json to_json() const;
  /// Throws InvalidRecord on protocol violations.
  static ChatRequest from_json(const nlohmann::json& j);
};

struct ChatChoice {
  std::string content;
  std::string finish_reason;  // "stop" or "length"
};

struct ChatResponse {
  std::vector<ChatChoice> choices;

  nlohmann::json to_json() const;
  static ChatResponse from_json(const nlohmann::json& j);
};

/// Transport-level failure; retried by the harness.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorKind::BackendUnreachable, what) {}
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Thread-safe. Throws TransportError on connection or protocol failure.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
  /// Number of complete() calls that reached the backend.
  virtual std::size_t calls() const = 0;
};

/// HTTP client for a base URL such as "http://127.0.0.1:8000".
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(std::string base_url, double timeout_s = 600.0);
  ChatResponse complete(const ChatRequest& request) override;
  std::size_t calls() const override { return calls_; }

 private:
  std::string host_;
  std::string path_prefix_;
  double timeout_s_;
  std::atomic<std::size_t> calls_{0};
};

/// Deterministic in-process backend.
///   echo    - returns the last user message
///   repeat  - returns a canned repetition loop
///   verbose - returns a long, loop-free paragraph
///   script  - first rule whose "match" occurs in the prompt supplies the response
/// Every mode truncates to max_tokens word/punct tokens and then reports
/// finish_reason "length". `fail_first` makes the first k calls throw TransportError.
class MockBackend : public ChatClient {
 public:
  enum class Mode { Echo, Repeat, Verbose, Script };
  struct Rule {
    std::string match;
    std::string response;
  };

  explicit MockBackend(Mode mode, std::vector<Rule> rules = {}, int fail_first = 0);

  /// "mock://echo", "mock://repeat?fail=2", "mock://script?file=rules.json".
  static std::unique_ptr<MockBackend> from_url(const std::string& url);

  ChatResponse complete(const ChatRequest& request) override;
  std::size_t calls() const override { return calls_; }

  /// Protocol-level entry used by the HTTP mock server: JSON in, JSON out.
  nlohmann::json handle(const nlohmann::json& request);

 private:
  std::string respond(const std::string& prompt) const;

  Mode mode_;
  std::vector<Rule> rules_;
  int fail_first_;
  std::atomic<int> failures_{0};
  std::atomic<std::size_t> calls_{0};
};

/// mock://... or http(s)://...; throws InvalidConfig for anything else.
std::unique_ptr<ChatClient> make_client(const std::string& url);

std::vector<MockBackend::Rule> load_script(const std::string& path);

/// HTTP server exposing a MockBackend on /v1/chat/completions.
class MockServer {
 public:
  explicit MockServer(MockBackend& backend);
  ~MockServer();

  /// Binds (port 0 picks a free port), serves on a background thread and
  /// returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace lct
