#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <httplib.h>

#include "lct/backend.hpp"
#include "lct/error.hpp"

using namespace lct;
using nlohmann::json;

namespace {

const std::filesystem::path kProtocol = std::filesystem::path(LCT_FIXTURES_DIR) / "protocol";

json load(const std::string& name) {
  std::ifstream in(kProtocol / name);
  return json::parse(in);
}

ChatRequest user_request(const std::string& prompt, int max_tokens = 64, int n = 1) {
  ChatRequest r;
  r.messages = {{"user", prompt}};
  r.max_tokens = max_tokens;
  r.n = n;
  return r;
}

}  // namespace

TEST(Protocol, GoldenRequestRoundTrips) {
  const auto golden = load("chat_request.json");
  const auto req = ChatRequest::from_json(golden);
  EXPECT_EQ(req.messages.size(), 2u);
  EXPECT_EQ(req.n, 2);
  EXPECT_EQ(req.to_json(), golden);
}

TEST(Protocol, EchoAnswersGoldenRequest) {
  MockBackend mock(MockBackend::Mode::Echo);
  EXPECT_EQ(mock.handle(load("chat_request.json")), load("chat_response.json"));
  auto req = load("chat_request.json");
  req["max_tokens"] = 3;
  req["n"] = 1;
  EXPECT_EQ(mock.handle(req), load("chat_response_length.json"));
}

TEST(Protocol, GoldenResponsesParse) {
  const auto r = ChatResponse::from_json(load("chat_response_length.json"));
  ASSERT_EQ(r.choices.size(), 1u);
  EXPECT_EQ(r.choices[0].content, "What is 6");
  EXPECT_EQ(r.choices[0].finish_reason, "length");
  EXPECT_THROW(ChatResponse::from_json(load("error_response.json")), TransportError);
}

TEST(Protocol, InvalidRequestsRejected) {
  std::ifstream in(kProtocol / "invalid_requests.jsonl");
  int count = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    ++count;
    EXPECT_THROW(ChatRequest::from_json(json::parse(line)), Error) << line;
  }
  EXPECT_EQ(count, 7);
}

TEST(MockBackend, Modes) {
  auto repeat = MockBackend::from_url("mock://repeat");
  const auto r = repeat->complete(user_request("anything", 1000));
  EXPECT_NE(r.choices[0].content.find("I need to check this again. I need to check this again."), std::string::npos);
  EXPECT_EQ(r.choices[0].finish_reason, "stop");

  auto verbose = MockBackend::from_url("mock://verbose");
  const auto v = verbose->complete(user_request("anything", 8));
  EXPECT_EQ(v.choices[0].content, "Step 1: the partial sum now equals");
  EXPECT_EQ(v.choices[0].finish_reason, "length");

  MockBackend script(MockBackend::Mode::Script, {{"apple", "fruit"}, {"a", "letter"}});
  EXPECT_EQ(script.complete(user_request("an apple")).choices[0].content, "fruit");
  EXPECT_EQ(script.complete(user_request("a pear")).choices[0].content, "letter");
  EXPECT_EQ(script.complete(user_request("xyz")).choices[0].content, "");
  EXPECT_EQ(script.calls(), 3u);
}

TEST(MockBackend, UrlParsing) {
  EXPECT_THROW(MockBackend::from_url("mock://nope"), Error);
  EXPECT_THROW(MockBackend::from_url("mock://echo?bogus=1"), Error);
  EXPECT_THROW(MockBackend::from_url("mock://script"), Error);
  EXPECT_THROW(make_client("ftp://host"), Error);
  auto flaky = MockBackend::from_url("mock://echo?fail=1");
  EXPECT_THROW(flaky->complete(user_request("x")), TransportError);
  EXPECT_EQ(flaky->complete(user_request("x")).choices[0].content, "x");

  const auto dir = std::filesystem::temp_directory_path() / "lct_backend_script";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "rules.json") << R"({"rules": [{"match": "2+2", "response": "\\boxed{4}"}]})";
  auto scripted = make_client("mock://script?file=" + (dir / "rules.json").string());
  EXPECT_EQ(scripted->complete(user_request("What is 2+2?")).choices[0].content, "\\boxed{4}");
}

TEST(MockServer, HttpRoundTrip) {
  MockBackend backend(MockBackend::Mode::Echo);
  MockServer server(backend);
  const int port = server.start();
  ASSERT_GT(port, 0);

  HttpChatClient client("http://127.0.0.1:" + std::to_string(port), 10);
  const auto golden = load("chat_request.json");
  const auto r = client.complete(ChatRequest::from_json(golden));
  EXPECT_EQ(r.to_json(), load("chat_response.json"));
  EXPECT_EQ(client.calls(), 1u);

  httplib::Client raw("127.0.0.1", port);
  auto bad = raw.Post("/v1/chat/completions", R"({"model": "default", "messages": []})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body), load("error_response.json"));
  auto garbage = raw.Post("/v1/chat/completions", "{not json", "application/json");
  ASSERT_TRUE(garbage);
  EXPECT_EQ(garbage->status, 400);
  server.stop();
}

TEST(MockServer, TransportFailuresSurfaceAsTransportError) {
  MockBackend backend(MockBackend::Mode::Echo, {}, /*fail_first=*/1);
  MockServer server(backend);
  const int port = server.start();
  HttpChatClient client("http://127.0.0.1:" + std::to_string(port) + "/", 10);
  EXPECT_THROW(client.complete(user_request("x")), TransportError);  // HTTP 500
  EXPECT_EQ(client.complete(user_request("x")).choices[0].content, "x");
  server.stop();

  HttpChatClient dead("http://127.0.0.1:" + std::to_string(port), 1);
  EXPECT_THROW(dead.complete(user_request("x")), TransportError);
}
