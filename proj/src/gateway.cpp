#include "triage/gateway.hpp"

#include <cmath>
#include <thread>

#include <fmt/format.h>

#include "triage/dataset.hpp"
#include "triage/io.hpp"

namespace triage {

std::string_view to_string(BackendKind k) noexcept {
  return k == BackendKind::OllamaGenerate ? "ollama-generate" : "openai-compatible-chat";
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "openai-compatible-chat") return BackendKind::OpenAiCompatibleChat;
  if (s == "ollama-generate") return BackendKind::OllamaGenerate;
  throw InputError(fmt::format("unknown backend kind '{}' (expected openai-compatible-chat or ollama-generate)", s));
}

void BackendConfig::validate() const {
  if (!(temperature >= 0.0)) throw std::invalid_argument("backend temperature must be >= 0");
  if (max_retries < 0) throw std::invalid_argument("backend max_retries must be >= 0");
  if (max_output_tokens <= 0) throw std::invalid_argument("backend max_output_tokens must be positive");
  if (!(timeout_seconds > 0.0)) throw std::invalid_argument("backend timeout must be positive");
  if (backoff_base_ms < 0) throw std::invalid_argument("backend backoff must be >= 0");
  if (model_id.empty()) throw std::invalid_argument("backend model_id is empty");
}

nlohmann::json BackendConfig::to_json() const {
  return {{"kind", to_string(kind)},
          {"base_url", base_url},
          {"model_id", model_id},
          {"temperature", temperature},
          {"max_output_tokens", max_output_tokens},
          {"timeout_seconds", timeout_seconds},
          {"max_retries", max_retries},
          {"api_key_env", api_key_env},
          {"backoff_base_ms", backoff_base_ms}};
}

BackendConfig BackendConfig::from_json(const nlohmann::json& j) {
  BackendConfig c;
  c.kind = backend_kind_from_string(j.value("kind", std::string(to_string(c.kind))));
  c.base_url = j.value("base_url", c.base_url);
  c.model_id = j.value("model_id", c.model_id);
  c.temperature = j.value("temperature", c.temperature);
  c.max_output_tokens = j.value("max_output_tokens", c.max_output_tokens);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.backoff_base_ms = j.value("backoff_base_ms", c.backoff_base_ms);
  c.validate();
  return c;
}

std::string BackendConfig::digest() const {
  nlohmann::json j = {{"kind", to_string(kind)},
                      {"model_id", model_id},
                      {"temperature", temperature},
                      {"max_output_tokens", max_output_tokens}};
  return sha256_hex(j.dump());
}

nlohmann::json request_body(const BackendConfig& cfg, const RenderedPrompt& prompt) {
  if (cfg.kind == BackendKind::OllamaGenerate) {
    return {{"model", cfg.model_id},
            {"system", prompt.system_text},
            {"prompt", prompt.user_text},
            {"stream", false},
            {"options", {{"temperature", cfg.temperature}, {"num_predict", cfg.max_output_tokens}}}};
  }
  nlohmann::json messages = nlohmann::json::array();
  if (!prompt.system_text.empty()) messages.push_back({{"role", "system"}, {"content", prompt.system_text}});
  messages.push_back({{"role", "user"}, {"content", prompt.user_text}});
  return {{"model", cfg.model_id},
          {"messages", std::move(messages)},
          {"temperature", cfg.temperature},
          {"max_tokens", cfg.max_output_tokens}};
}

std::string request_path(BackendKind kind) {
  return kind == BackendKind::OllamaGenerate ? "/api/generate" : "/v1/chat/completions";
}

std::string extract_response_text(BackendKind kind, std::string_view body) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw BackendError(200, "response body is not JSON");
  if (kind == BackendKind::OllamaGenerate) {
    if (j.contains("response") && j["response"].is_string()) return j["response"].get<std::string>();
    throw BackendError(200, "response body lacks 'response'");
  }
  const auto* content = j.contains("choices") && j["choices"].is_array() && !j["choices"].empty()
                            ? &j["choices"][0]
                            : nullptr;
  if (content && content->contains("message") && (*content)["message"].contains("content") &&
      (*content)["message"]["content"].is_string())
    return (*content)["message"]["content"].get<std::string>();
  throw BackendError(200, "response body lacks choices[0].message.content");
}

std::string ScriptedBackend::complete(const BackendConfig&, const RenderedPrompt& prompt) {
  auto n = calls_.fetch_add(1);
  return script_(prompt, n);
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string ResponseCache::key(const std::string& model_id, const std::string& content_hash, double temperature) {
  std::array<std::string, 3> parts{model_id, content_hash, fmt::format("{:.17g}", temperature)};
  return sha256_hex_parts(parts);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) {
  std::lock_guard lock(mu_);
  if (auto it = memory_.find(key); it != memory_.end()) return it->second;
  if (dir_.empty()) return std::nullopt;
  auto p = path_for(key);
  std::error_code ec;
  if (!std::filesystem::exists(p, ec)) return std::nullopt;
  auto j = nlohmann::json::parse(read_file(p), nullptr, false);
  if (j.is_discarded() || !j.contains("response") || !j["response"].is_string()) return std::nullopt;
  auto text = j["response"].get<std::string>();
  memory_.emplace(key, text);
  return text;
}

void ResponseCache::put(const std::string& key, const std::string& response) {
  std::lock_guard lock(mu_);
  memory_[key] = response;
  if (dir_.empty()) return;
  nlohmann::json j = {{"key", key}, {"response", response}};
  write_file_atomic(path_for(key), j.dump() + "\n");
}

Sleeper default_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string classify_remote(const BackendConfig& cfg, const RenderedPrompt& prompt, Backend& backend,
                            ResponseCache* cache, GatewayStats* stats, const Sleeper& sleep) {
  const auto key = ResponseCache::key(cfg.model_id, prompt.content_hash, cfg.temperature);
  if (cache) {
    if (auto hit = cache->get(key)) {
      if (stats) ++stats->cache_hits;
      return *hit;
    }
  }
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      if (stats) ++stats->retries;
      if (sleep) sleep(std::chrono::milliseconds(static_cast<long long>(cfg.backoff_base_ms) << (attempt - 1)));
    }
    if (stats) ++stats->requests;
    try {
      auto text = backend.complete(cfg, prompt);
      if (cache) cache->put(key, text);
      return text;
    } catch (const BackendError& e) {
      if (!e.transient()) throw;
      last_error = fmt::format("status {}: {}", e.status(), e.what());
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw TransportError(fmt::format("gave up after {} attempts: {}", cfg.max_retries + 1, last_error));
}

PredictionSet run_classification_job(const BackendConfig& cfg, Backend& backend, ResponseCache* cache,
                                     PromptSetting setting, const std::vector<InquiryRecord>& cases,
                                     const std::vector<Demonstration>& demos, const JobOptions& options,
                                     GatewayStats* stats) {
  cfg.validate();
  if (demos.size() != static_cast<std::size_t>(setting.shots))
    throw std::invalid_argument(fmt::format("{} needs {} demonstrations, got {}", setting.name(), setting.shots,
                                            demos.size()));

  std::vector<RecordId> ids;
  ids.reserve(cases.size());
  for (const auto& c : cases) ids.push_back(c.id);

  PredictionSet set;
  set.model_name = options.model_name.empty() ? cfg.model_id : options.model_name;
  set.setting = setting.name();
  set.split_digest = id_digest(ids);
  std::vector<RecordId> demo_ids;
  for (const auto& d : demos) demo_ids.push_back(d.id);
  set.manifest = {{"backend", to_string(cfg.kind)},
                  {"model_id", cfg.model_id},
                  {"config_digest", cfg.digest()},
                  {"template_digest", sha256_hex(options.prompt_template.text)},
                  {"demonstration_ids", demo_ids},
                  {"cases", cases.size()}};

  std::vector<ParseOutcome> outcomes(cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      RenderedPrompt prompt = render_prompt(setting, demos, cases[i].patient_text, options.prompt_template);
      try {
        outcomes[i] = parse_structured_output(classify_remote(cfg, prompt, backend, cache, stats, options.sleep));
      } catch (const std::exception& e) {
        if (stats) ++stats->transport_failures;
        outcomes[i] = ParseFailure{"", ParseFailureReason::NoObjectFound, fmt::format("transport: {}", e.what())};
      }
    }
  };
  const unsigned n_threads =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, options.parallelism), std::max<std::size_t>(1, cases.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!set.entries.emplace(cases[i].id, std::move(outcomes[i])).second)
      throw InputError(fmt::format("duplicate case id {}", cases[i].id));
  }
  return set;
}

}  // namespace triage
