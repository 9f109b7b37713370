// Offline OpenAI-compatible and Ollama-style endpoint answering with the
// deterministic stub responder. For demos and wiring checks only.

#include <algorithm>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "stub_responder.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Deterministic stub model server"};
  std::string host = "127.0.0.1";
  int port = 8089;
  unsigned bias = 0;
  unsigned garbage_every = 0;
  std::vector<std::string> biased_models;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--bias", bias, "shift the label on 1 in N messages (0 disables)");
  app.add_option("--garbage-every", garbage_every, "answer 1 in N messages with unparseable prose (0 disables)");
  app.add_option("--bias-model", biased_models, "apply --bias only to this model id (repeatable; default all)");
  CLI11_PARSE(app, argc, argv);

  auto bias_for = [&](const std::string& model) {
    if (biased_models.empty()) return bias;
    return std::find(biased_models.begin(), biased_models.end(), model) != biased_models.end() ? bias : 0u;
  };

  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("messages")) {
      res.status = 400;
      return;
    }
    std::string prompt;
    for (const auto& m : body["messages"]) prompt += m.value("content", "");
    nlohmann::json reply = {
        {"object", "chat.completion"},
        {"model", body.value("model", "")},
        {"choices",
         {{{"index", 0},
           {"message", {{"role", "assistant"}, {"content", triage::stub::stub_reply(prompt, bias_for(body.value("model", "")), garbage_every)}}},
           {"finish_reason", "stop"}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/api/generate", [&](const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded()) {
      res.status = 400;
      return;
    }
    auto prompt = body.value("system", "") + body.value("prompt", "");
    nlohmann::json reply = {{"model", body.value("model", "")},
                            {"response", triage::stub::stub_reply(prompt, bias_for(body.value("model", "")), garbage_every)},
                            {"done", true}};
    res.set_content(reply.dump(), "application/json");
  });
  std::cerr << fmt::format("listening on http://{}:{}\n", host, port);
  return server.listen(host, port) ? 0 : 1;
}
