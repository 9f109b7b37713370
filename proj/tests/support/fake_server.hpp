#pragma once

// Local HTTP server speaking both backend wire formats, driven by a handler
// that sees the decoded prompt and the request count.

#include <atomic>
#include <functional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace testsupport {

struct FakeReply {
  int status = 200;
  std::string text;         // model output placed into the body
  std::string raw_body;     // when set, sent verbatim instead
};

class FakeModelServer {
 public:
  using Handler = std::function<FakeReply(const std::string& prompt, std::size_t request_index)>;

  explicit FakeModelServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_authorization_ = req.get_header_value("Authorization");
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      std::string prompt;
      if (!body.is_discarded() && body.contains("messages"))
        for (const auto& m : body["messages"]) prompt += m.value("content", "");
      respond(prompt, res, [](const std::string& text) {
        return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}}}.dump();
      });
    });
    server_.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
      auto body = nlohmann::json::parse(req.body, nullptr, false);
      std::string prompt = body.is_discarded() ? "" : body.value("system", "") + body.value("prompt", "");
      respond(prompt, res, [](const std::string& text) { return nlohmann::json{{"response", text}, {"done", true}}.dump(); });
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~FakeModelServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  FakeModelServer(const FakeModelServer&) = delete;
  FakeModelServer& operator=(const FakeModelServer&) = delete;

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  std::size_t requests() const { return count_.load(); }
  std::string last_authorization() const { return last_authorization_; }

 private:
  template <typename Wrap>
  void respond(const std::string& prompt, httplib::Response& res, Wrap wrap) {
    auto reply = handler_(prompt, count_++);
    res.status = reply.status;
    res.set_content(reply.raw_body.empty() ? wrap(reply.text) : reply.raw_body, "application/json");
  }

  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<std::size_t> count_{0};
  std::string last_authorization_;
};

}  // namespace testsupport
