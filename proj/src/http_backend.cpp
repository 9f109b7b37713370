#include <httplib.h>

#include <cstdlib>

#include <fmt/format.h>

#include "triage/gateway.hpp"

namespace triage {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos) throw TransportError(fmt::format("base_url '{}' lacks a scheme", url));
  auto slash = url.find('/', scheme + 3);
  SplitUrl s;
  s.origin = url.substr(0, slash);
  if (slash != std::string::npos) s.prefix = url.substr(slash);
  while (!s.prefix.empty() && s.prefix.back() == '/') s.prefix.pop_back();
  return s;
}

class HttpBackend : public Backend {
 public:
  std::string complete(const BackendConfig& cfg, const RenderedPrompt& prompt) override {
    auto url = split_url(cfg.base_url);
    httplib::Client client(url.origin);
    auto secs = std::chrono::duration<double>(cfg.timeout_seconds);
    auto usec = std::chrono::duration_cast<std::chrono::microseconds>(secs);
    client.set_connection_timeout(usec);
    client.set_read_timeout(usec);
    client.set_write_timeout(usec);
    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
      const char* key = std::getenv(cfg.api_key_env.c_str());
      if (!key || !*key) throw BackendError(401, fmt::format("environment variable {} is not set", cfg.api_key_env));
      headers.emplace("Authorization", fmt::format("Bearer {}", key));
    }
    auto res = client.Post(url.prefix + request_path(cfg.kind), headers, request_body(cfg, prompt).dump(),
                           "application/json");
    if (!res) throw TransportError(fmt::format("{}: {}", cfg.base_url, httplib::to_string(res.error())));
    if (res->status < 200 || res->status >= 300)
      throw BackendError(res->status, fmt::format("{} returned status {}", cfg.base_url, res->status));
    return extract_response_text(cfg.kind, res->body);
  }
};

}  // namespace

std::unique_ptr<Backend> make_http_backend() { return std::make_unique<HttpBackend>(); }

}  // namespace triage
