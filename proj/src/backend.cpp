#include "lct/backend.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "lct/tokenize.hpp"

namespace lct {

using nlohmann::json;

json ChatRequest::to_json() const {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return json{{"model", model}, {"messages", msgs}, {"temperature", temperature}, {"max_tokens", max_tokens}, {"n", n}};
}

ChatRequest ChatRequest::from_json(const json& j) {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidRecord, "bad chat request: " + why); };
  if (!j.is_object()) fail("not an object");
  if (!j.contains("messages") || !j["messages"].is_array() || j["messages"].empty()) fail("messages must be a non-empty array");
  ChatRequest r;
  if (j.contains("model")) {
    if (!j["model"].is_string()) fail("model must be a string");
    r.model = j["model"].get<std::string>();
  }
  for (const auto& m : j["messages"]) {
    if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["role"].is_string() ||
        !m["content"].is_string()) {
      fail("each message needs string role and content");
    }
    r.messages.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
  }
  if (j.contains("temperature")) {
    if (!j["temperature"].is_number() || j["temperature"].get<double>() < 0) fail("temperature must be >= 0");
    r.temperature = j["temperature"].get<double>();
  }
  if (j.contains("max_tokens")) {
    if (!j["max_tokens"].is_number_integer() || j["max_tokens"].get<int>() < 1) fail("max_tokens must be >= 1");
    r.max_tokens = j["max_tokens"].get<int>();
  }
  if (j.contains("n")) {
    if (!j["n"].is_number_integer() || j["n"].get<int>() < 1) fail("n must be >= 1");
    r.n = j["n"].get<int>();
  }
  return r;
}

json ChatResponse::to_json() const {
  json choices_j = json::array();
  for (std::size_t i = 0; i < choices.size(); ++i) {
    choices_j.push_back({{"index", i},
                         {"message", {{"role", "assistant"}, {"content", choices[i].content}}},
                         {"finish_reason", choices[i].finish_reason}});
  }
  return json{{"object", "chat.completion"}, {"choices", choices_j}};
}

ChatResponse ChatResponse::from_json(const json& j) {
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array()) {
    throw TransportError("malformed response: missing choices array");
  }
  ChatResponse r;
  for (const auto& c : j["choices"]) {
    if (!c.is_object() || !c.contains("message") || !c["message"].is_object()) {
      throw TransportError("malformed response: choice without message");
    }
    ChatChoice choice;
    const auto& content = c["message"].value("content", json());
    choice.content = content.is_string() ? content.get<std::string>() : "";
    const auto& fr = c.value("finish_reason", json());
    choice.finish_reason = fr.is_string() ? fr.get<std::string>() : "";
    r.choices.push_back(std::move(choice));
  }
  return r;
}

HttpChatClient::HttpChatClient(std::string base_url, double timeout_s) : timeout_s_(timeout_s) {
  // scheme://host[:port][/prefix]
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorKind::InvalidConfig, "backend URL needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  host_ = base_url.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  ++calls_;
  httplib::Client cli(host_);
  const auto secs = static_cast<time_t>(timeout_s_);
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  auto res = cli.Post(path_prefix_ + "/v1/chat/completions", request.to_json().dump(), "application/json");
  if (!res) throw TransportError("request to " + host_ + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw TransportError("backend returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    return ChatResponse::from_json(json::parse(res->body));
  } catch (const json::exception& e) {
    throw TransportError(std::string("backend returned invalid JSON: ") + e.what());
  }
}

MockBackend::MockBackend(Mode mode, std::vector<Rule> rules, int fail_first)
    : mode_(mode), rules_(std::move(rules)), fail_first_(fail_first) {}

std::vector<MockBackend::Rule> load_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open mock script " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, "mock script " + path + ": " + e.what());
  }
  const json& list = j.is_object() && j.contains("rules") ? j["rules"] : j;
  if (!list.is_array()) throw Error(ErrorKind::InvalidConfig, "mock script must be an array of {match, response}");
  std::vector<MockBackend::Rule> rules;
  for (const auto& r : list) rules.push_back({r.at("match").get<std::string>(), r.at("response").get<std::string>()});
  return rules;
}

std::unique_ptr<MockBackend> MockBackend::from_url(const std::string& url) {
  constexpr std::string_view kPrefix = "mock://";
  if (url.rfind(kPrefix, 0) != 0) throw Error(ErrorKind::InvalidConfig, "not a mock URL: " + url);
  std::string rest = url.substr(kPrefix.size());
  std::string query;
  if (const auto q = rest.find('?'); q != std::string::npos) {
    query = rest.substr(q + 1);
    rest = rest.substr(0, q);
  }
  int fail = 0;
  std::string file;
  std::stringstream qs(query);
  for (std::string kv; std::getline(qs, kv, '&');) {
    const auto eq = kv.find('=');
    const std::string key = kv.substr(0, eq), value = eq == std::string::npos ? "" : kv.substr(eq + 1);
    if (key == "fail") {
      fail = std::stoi(value);
    } else if (key == "file") {
      file = value;
    } else if (!key.empty()) {
      throw Error(ErrorKind::InvalidConfig, "unknown mock parameter '" + key + "'");
    }
  }
  if (rest == "echo") return std::make_unique<MockBackend>(Mode::Echo, std::vector<Rule>{}, fail);
  if (rest == "repeat") return std::make_unique<MockBackend>(Mode::Repeat, std::vector<Rule>{}, fail);
  if (rest == "verbose") return std::make_unique<MockBackend>(Mode::Verbose, std::vector<Rule>{}, fail);
  if (rest == "script") {
    if (file.empty()) throw Error(ErrorKind::InvalidConfig, "mock://script needs ?file=rules.json");
    return std::make_unique<MockBackend>(Mode::Script, load_script(file), fail);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown mock mode '" + rest + "'");
}

std::string MockBackend::respond(const std::string& prompt) const {
  switch (mode_) {
    case Mode::Echo:
      return prompt;
    case Mode::Repeat: {
      std::string out;
      for (int i = 0; i < 40; ++i) out += "I need to check this again. ";
      return out;
    }
    case Mode::Verbose: {
      std::string out;
      for (int i = 1; i <= 60; ++i) {
        out += "Step " + std::to_string(i) + ": the partial sum now equals " + std::to_string(i * (i + 1) / 2) + ". ";
      }
      return out;
    }
    case Mode::Script:
      for (const auto& r : rules_) {
        if (prompt.find(r.match) != std::string::npos) return r.response;
      }
      return "";
  }
  return "";
}

ChatResponse MockBackend::complete(const ChatRequest& request) {
  ++calls_;
  if (failures_.fetch_add(1) < fail_first_) throw TransportError("mock transport failure");
  std::string prompt;
  for (const auto& m : request.messages) {
    if (m.role == "user") prompt = m.content;
  }
  std::string text = respond(prompt);
  std::string finish = "stop";
  const auto tokens = word_punct_tokens(text);
  if (tokens.size() > static_cast<std::size_t>(request.max_tokens)) {
    const auto& last = tokens[static_cast<std::size_t>(request.max_tokens) - 1];
    text = text.substr(0, static_cast<std::size_t>(last.data() + last.size() - text.data()));
    finish = "length";
  }
  ChatResponse r;
  r.choices.assign(static_cast<std::size_t>(request.n), ChatChoice{text, finish});
  return r;
}

json MockBackend::handle(const json& request) { return complete(ChatRequest::from_json(request)).to_json(); }

std::unique_ptr<ChatClient> make_client(const std::string& url) {
  if (url.rfind("mock://", 0) == 0) return MockBackend::from_url(url);
  if (url.rfind("http://", 0) == 0 || url.rfind("https://", 0) == 0) return std::make_unique<HttpChatClient>(url);
  throw Error(ErrorKind::InvalidConfig, "unsupported backend URL '" + url + "'");
}

struct MockServer::Impl {
  MockBackend& backend;
  httplib::Server server;
  std::thread thread;

  explicit Impl(MockBackend& b) : backend(b) {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      auto error = [&res](int status, const std::string& type, const std::string& msg) {
        res.status = status;
        res.set_content(json{{"error", {{"type", type}, {"message", msg}}}}.dump(), "application/json");
      };
      try {
        res.set_content(backend.handle(json::parse(req.body)).dump(), "application/json");
      } catch (const json::exception& e) {
        error(400, "invalid_request_error", e.what());
      } catch (const TransportError& e) {
        error(500, "server_error", e.what());
      } catch (const Error& e) {
        error(400, "invalid_request_error", e.what());
      }
    });
  }
};

MockServer::MockServer(MockBackend& backend) : impl_(std::make_unique<Impl>(backend)) {}

MockServer::~MockServer() { stop(); }

int MockServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorKind::IoFailure, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void MockServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error(ErrorKind::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
}

void MockServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace lct
