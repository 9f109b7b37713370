#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "triage/corpus.hpp"
#include "triage/predictions.hpp"
#include "triage/prompt.hpp"

namespace triage {

enum class BackendKind { OpenAiCompatibleChat, OllamaGenerate };

std::string_view to_string(BackendKind k) noexcept;
BackendKind backend_kind_from_string(std::string_view s);

struct BackendConfig {
  BackendKind kind = BackendKind::OpenAiCompatibleChat;
  std::string base_url;  // scheme://host[:port][/prefix], without the API path
  std::string model_id;
  double temperature = 0.0;
  int max_output_tokens = 256;
  double timeout_seconds = 60.0;
  int max_retries = 3;
  std::string api_key_env;  // name of the environment variable holding the key
  int backoff_base_ms = 500;

  void validate() const;
  nlohmann::json to_json() const;
  static BackendConfig from_json(const nlohmann::json& j);
  /// Digest of the fields that influence responses (the endpoint address is
  /// left out).
  std::string digest() const;
};

/// Connection failures and exhausted retries.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A response with a non-success status, or a body that lacks the text field.
class BackendError : public std::runtime_error {
 public:
  BackendError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const noexcept { return status_; }
  /// 408, 429 and 5xx are worth retrying.
  bool transient() const noexcept { return status_ == 408 || status_ == 429 || status_ >= 500; }

 private:
  int status_;
};

/// One attempt against a backend, returning the generated text.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const BackendConfig& cfg, const RenderedPrompt& prompt) = 0;
};

/// HTTP client for both wire formats.
std::unique_ptr<Backend> make_http_backend();

/// Request body sent for a prompt; exposed for tests.
nlohmann::json request_body(const BackendConfig& cfg, const RenderedPrompt& prompt);
std::string request_path(BackendKind kind);
/// Pulls the generated text out of a response body; throws BackendError.
std::string extract_response_text(BackendKind kind, std::string_view body);

/// Calls a function per attempt. Thread-safe call counting.
class ScriptedBackend : public Backend {
 public:
  using Script = std::function<std::string(const RenderedPrompt&, std::size_t attempt)>;
  explicit ScriptedBackend(Script script) : script_(std::move(script)) {}

  std::string complete(const BackendConfig& cfg, const RenderedPrompt& prompt) override;
  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  Script script_;
  std::atomic<std::size_t> calls_{0};
};

/// Raw responses keyed by (model_id, content hash, temperature). With an empty
/// directory the cache lives in memory only.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir = {});

  static std::string key(const std::string& model_id, const std::string& content_hash, double temperature);

  std::optional<std::string> get(const std::string& key);
  void put(const std::string& key, const std::string& response);

 private:
  std::filesystem::path path_for(const std::string& key) const;

  std::filesystem::path dir_;
  std::mutex mu_;
  std::unordered_map<std::string, std::string> memory_;
};

struct GatewayStats {
  std::atomic<std::size_t> requests{0};  // attempts sent to the backend
  std::atomic<std::size_t> cache_hits{0};
  std::atomic<std::size_t> retries{0};
  std::atomic<std::size_t> transport_failures{0};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
Sleeper default_sleeper();

/// Returns the cached or freshly generated text. Retries transient failures
/// up to cfg.max_retries times, waiting backoff_base_ms * 2^attempt between
/// tries. Exhausted retries raise TransportError; non-transient statuses
/// raise BackendError at once.
std::string classify_remote(const BackendConfig& cfg, const RenderedPrompt& prompt, Backend& backend,
                            ResponseCache* cache, GatewayStats* stats = nullptr,
                            const Sleeper& sleep = default_sleeper());

struct JobOptions {
  unsigned parallelism = 4;
  PromptTemplate prompt_template;
  std::string model_name;  // defaults to cfg.model_id
  Sleeper sleep = default_sleeper();
};

/// Classifies every case. Failed calls and unparseable outputs become
/// ParseFailure entries; a transport failure carries its message as the note.
PredictionSet run_classification_job(const BackendConfig& cfg, Backend& backend, ResponseCache* cache,
                                     PromptSetting setting, const std::vector<InquiryRecord>& cases,
                                     const std::vector<Demonstration>& demos, const JobOptions& options,
                                     GatewayStats* stats = nullptr);

}  // namespace triage
