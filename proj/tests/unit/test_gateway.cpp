#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "triage/evaluation.hpp"
#include "triage/gateway.hpp"
#include "../support/fake_server.hpp"
#include "../support/tempdir.hpp"
#include "stub_responder.hpp"

using namespace triage;

namespace {

const Sleeper kNoSleep = [](std::chrono::milliseconds) {};

BackendConfig cfg_for(std::string url = "http://127.0.0.1:1", BackendKind kind = BackendKind::OpenAiCompatibleChat) {
  BackendConfig c;
  c.kind = kind;
  c.base_url = std::move(url);
  c.model_id = "stub-model";
  c.backoff_base_ms = 0;
  c.timeout_seconds = 5;
  return c;
}

std::vector<InquiryRecord> cases_n(std::size_t n) {
  std::vector<InquiryRecord> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({static_cast<RecordId>(i + 1), "message number " + std::to_string(i), "", i});
  return v;
}

const std::string kValid = R"({"label":"schedule-visit","confidence":"medium","insufficient_info":false})";

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("backend config validation and json") {
    auto c = cfg_for();
    CHECK_NOTHROW(c.validate());
    auto back = BackendConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.digest() == c.digest());
    auto moved = c;
    moved.base_url = "http://elsewhere:9";
    CHECK(moved.digest() == c.digest());
    moved.temperature = 0.5;
    CHECK(moved.digest() != c.digest());
    CHECK_THROWS(BackendConfig::from_json({{"model_id", ""}}));
    CHECK_THROWS(BackendConfig::from_json({{"model_id", "m"}, {"temperature", -1}}));
    CHECK_THROWS(BackendConfig::from_json({{"model_id", "m"}, {"kind", "carrier-pigeon"}}));
  }

  TEST_CASE("wire formats") {
    RenderedPrompt p{"SYS", "USER", "h"};
    auto chat = request_body(cfg_for(), p);
    CHECK(chat["model"] == "stub-model");
    CHECK(chat["messages"].size() == 2);
    CHECK(chat["messages"][0]["role"] == "system");
    CHECK(chat["messages"][1]["content"] == "USER");
    CHECK(chat["temperature"] == 0.0);
    CHECK(chat["max_tokens"] == 256);
    auto gen = request_body(cfg_for("u", BackendKind::OllamaGenerate), p);
    CHECK(gen["system"] == "SYS");
    CHECK(gen["prompt"] == "USER");
    CHECK(gen["stream"] == false);
    CHECK(gen["options"]["num_predict"] == 256);
    CHECK(request_path(BackendKind::OpenAiCompatibleChat) == "/v1/chat/completions");
    CHECK(request_path(BackendKind::OllamaGenerate) == "/api/generate");
    CHECK(extract_response_text(BackendKind::OpenAiCompatibleChat, R"({"choices":[{"message":{"content":"x"}}]})") == "x");
    CHECK(extract_response_text(BackendKind::OllamaGenerate, R"({"response":"y"})") == "y");
    CHECK_THROWS_AS(extract_response_text(BackendKind::OpenAiCompatibleChat, "{}"), BackendError);
    CHECK_THROWS_AS(extract_response_text(BackendKind::OllamaGenerate, "nope"), BackendError);
  }

  TEST_CASE("stub text passes through unchanged") {
    ScriptedBackend b([](const RenderedPrompt&, std::size_t) { return std::string("exact text"); });
    RenderedPrompt p{"s", "u", "hash"};
    CHECK(classify_remote(cfg_for(), p, b, nullptr, nullptr, kNoSleep) == "exact text");
  }

  TEST_CASE("two transient failures then success") {
    ScriptedBackend b([](const RenderedPrompt&, std::size_t attempt) -> std::string {
      if (attempt < 2) throw TransportError("connection reset");
      return kValid;
    });
    GatewayStats stats;
    std::vector<long long> waits;
    auto cfg = cfg_for();
    cfg.backoff_base_ms = 100;
    auto text = classify_remote(cfg, {"s", "u", "h"}, b, nullptr, &stats,
                                [&](std::chrono::milliseconds d) { waits.push_back(d.count()); });
    CHECK(text == kValid);
    CHECK(b.calls() == 3);
    CHECK(stats.requests == 3);
    CHECK(stats.retries == 2);
    CHECK(waits == std::vector<long long>{100, 200});
  }

  TEST_CASE("retries are bounded and permanent errors are not retried") {
    ScriptedBackend down([](const RenderedPrompt&, std::size_t) -> std::string { throw BackendError(503, "busy"); });
    CHECK_THROWS_WITH_AS(classify_remote(cfg_for(), {"s", "u", "h"}, down, nullptr, nullptr, kNoSleep),
                         doctest::Contains("4 attempts"), TransportError);
    CHECK(down.calls() == 4);
    ScriptedBackend denied([](const RenderedPrompt&, std::size_t) -> std::string { throw BackendError(401, "no"); });
    CHECK_THROWS_AS(classify_remote(cfg_for(), {"s", "u", "h"}, denied, nullptr, nullptr, kNoSleep), BackendError);
    CHECK(denied.calls() == 1);
    CHECK(BackendError(429, "").transient());
    CHECK(BackendError(408, "").transient());
    CHECK_FALSE(BackendError(400, "").transient());
  }

  TEST_CASE("cache hits skip the backend and persist on disk") {
    testsupport::TempDir dir("cache");
    ScriptedBackend b([](const RenderedPrompt&, std::size_t) { return kValid; });
    GatewayStats stats;
    {
      ResponseCache cache(dir.path());
      classify_remote(cfg_for(), {"s", "u", "h1"}, b, &cache, &stats, kNoSleep);
      classify_remote(cfg_for(), {"s", "u", "h1"}, b, &cache, &stats, kNoSleep);
    }
    CHECK(b.calls() == 1);
    CHECK(stats.cache_hits == 1);
    ResponseCache reopened(dir.path());
    CHECK(classify_remote(cfg_for(), {"s", "u", "h1"}, b, &reopened, &stats, kNoSleep) == kValid);
    CHECK(b.calls() == 1);
    auto hot = cfg_for();
    hot.temperature = 0.7;
    classify_remote(hot, {"s", "u", "h1"}, b, &reopened, &stats, kNoSleep);
    CHECK(b.calls() == 2);
    CHECK(ResponseCache::key("m", "h", 0.0) != ResponseCache::key("m", "h", 0.1));
    CHECK(ResponseCache::key("m", "h", 0.0) != ResponseCache::key("n", "h", 0.0));
  }

  TEST_CASE("300-case job with valid outputs") {
    ScriptedBackend b([](const RenderedPrompt& p, std::size_t) { return stub::stub_reply(p.full_text()); });
    JobOptions jo;
    jo.parallelism = 4;
    jo.sleep = kNoSleep;
    jo.model_name = "stub";
    auto set = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), cases_n(300), {}, jo);
    CHECK(set.entries.size() == 300);
    CHECK(set.failures() == 0);
    CHECK(parse_fail_rate(set) == 0.0);
    CHECK(set.config_name() == "stub@0-shot");
    CHECK(set.manifest["cases"] == 300);
  }

  TEST_CASE("eight garbage responses among 300") {
    ScriptedBackend b([](const RenderedPrompt& p, std::size_t) {
      auto q = stub::query_of(p.full_text());
      const auto n = std::stoi(q.substr(q.rfind(' ') + 1));
      return n % 37 == 0 && n < 37 * 8 ? std::string("Sorry, I cannot help with that.") : kValid;
    });
    JobOptions jo;
    jo.sleep = kNoSleep;
    auto set = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), cases_n(300), {}, jo);
    CHECK(set.failures() == 8);
    CHECK(parse_fail_rate(set) == doctest::Approx(8.0 / 300.0));
  }

  TEST_CASE("empty job sends nothing; failed calls become failures") {
    ScriptedBackend b([](const RenderedPrompt&, std::size_t) -> std::string { throw TransportError("down"); });
    JobOptions jo;
    jo.sleep = kNoSleep;
    auto empty = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), {}, {}, jo);
    CHECK(empty.entries.empty());
    CHECK(b.calls() == 0);
    GatewayStats stats;
    auto failed = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), cases_n(3), {}, jo, &stats);
    CHECK(failed.failures() == 3);
    CHECK(stats.transport_failures == 3);
    const auto& f = std::get<ParseFailure>(failed.entries.at(1));
    CHECK(f.note.find("transport") != std::string::npos);
    CHECK_THROWS(run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(4), cases_n(1), {}, jo));
  }

  TEST_CASE("job results do not depend on parallelism") {
    ScriptedBackend b([](const RenderedPrompt& p, std::size_t) { return stub::stub_reply(p.full_text(), 3, 5); });
    JobOptions one, many;
    one.parallelism = 1;
    many.parallelism = 8;
    one.sleep = many.sleep = kNoSleep;
    auto a = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), cases_n(50), {}, one);
    auto c = run_classification_job(cfg_for(), b, nullptr, PromptSetting::from_shots(0), cases_n(50), {}, many);
    CHECK(to_json(a).dump() == to_json(c).dump());
  }

  TEST_CASE("http client against a local server") {
    testsupport::FakeModelServer server([](const std::string& prompt, std::size_t i) {
      if (i == 0) return testsupport::FakeReply{503, "", "{}"};
      return testsupport::FakeReply{200, stub::stub_reply(prompt), ""};
    });
    auto backend = make_http_backend();
    auto cfg = cfg_for(server.base_url());
    auto text = classify_remote(cfg, render_prompt(PromptSetting::from_shots(0), {}, "I have a high fever"), *backend,
                                nullptr, nullptr, kNoSleep);
    CHECK(server.requests() == 2);
    auto parsed = parse_structured_output(text);
    REQUIRE(is_valid(parsed));
    CHECK(label_if_valid(parsed) == TriageLabel::UrgentClinicianReview);

    auto gen = cfg_for(server.base_url(), BackendKind::OllamaGenerate);
    auto text2 = backend->complete(gen, render_prompt(PromptSetting::from_shots(0), {}, "mild cold"));
    CHECK(label_if_valid(parse_structured_output(text2)) == TriageLabel::SelfCare);
  }

  TEST_CASE("http client sends the key from the environment") {
    testsupport::FakeModelServer server([](const std::string&, std::size_t) { return testsupport::FakeReply{200, kValid, ""}; });
    auto backend = make_http_backend();
    auto cfg = cfg_for(server.base_url() + "/");
    cfg.api_key_env = "TRIAGE_TEST_KEY_UNSET_12345";
    ::unsetenv(cfg.api_key_env.c_str());
    CHECK_THROWS_AS(backend->complete(cfg, {"s", "u", "h"}), BackendError);
    ::setenv(cfg.api_key_env.c_str(), "sk-test", 1);
    CHECK(backend->complete(cfg, {"s", "u", "h"}) == kValid);
    CHECK(server.last_authorization() == "Bearer sk-test");
    ::unsetenv(cfg.api_key_env.c_str());
  }

  TEST_CASE("http errors map to the right exception") {
    testsupport::FakeModelServer server([](const std::string&, std::size_t) { return testsupport::FakeReply{404, "", "{}"}; });
    auto backend = make_http_backend();
    try {
      backend->complete(cfg_for(server.base_url()), {"s", "u", "h"});
      FAIL("expected an error");
    } catch (const BackendError& e) {
      CHECK(e.status() == 404);
    }
    auto closed = cfg_for("http://127.0.0.1:9");
    closed.timeout_seconds = 1;
    CHECK_THROWS_AS(backend->complete(closed, {"s", "u", "h"}), TransportError);
  }
}
