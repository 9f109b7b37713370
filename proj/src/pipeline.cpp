#include "triage/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <regex>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "triage/consensus.hpp"
#include "triage/dataset.hpp"
#include "triage/io.hpp"
#include "triage/prompt.hpp"
#include "triage/report.hpp"
#include "triage/rng.hpp"

namespace triage {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::array<std::string_view, kNumBuckets> kBucketKeys = {"emergency", "selfcare", "urgent", "schedule"};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return resolve(base, j[key].get<std::string>());
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw InputError(fmt::format("{} must be an object", where));
  for (const auto& [k, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw InputError(fmt::format("unknown key '{}' in {}", k, where));
  }
}

bool valid_name(const std::string& s) {
  static const std::regex re("[A-Za-z0-9._-]+");
  return std::regex_match(s, re);
}

std::string baseline_name(const std::string& condition) { return "tfidf-lr-" + condition; }

std::string now_utc() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown(j,
                 {"corpus", "filter", "sampling", "keywords", "labels", "baseline", "models", "externals", "prompt",
                  "evaluation", "consensus", "output_dir", "cache_dir"},
                 "config");
  ExperimentConfig c;
  try {
    const auto& corpus = j.at("corpus");
    reject_unknown(corpus, {"path", "format", "columns"}, "corpus");
    c.corpus_path = resolve(base_dir, corpus.at("path").get<std::string>());
    c.corpus_format = corpus_format_from_string(corpus.value("format", "json-lines"));
    if (corpus.contains("columns")) {
      const auto& cols = corpus["columns"];
      reject_unknown(cols, {"id", "patient", "physician"}, "corpus.columns");
      c.columns.id = cols.value("id", c.columns.id);
      c.columns.patient = cols.value("patient", c.columns.patient);
      c.columns.physician = cols.value("physician", c.columns.physician);
    }
    if (j.contains("filter")) {
      const auto& f = j["filter"];
      reject_unknown(f, {"min_tokens", "max_tokens", "min_chars"}, "filter");
      c.filter.min_tokens = f.value("min_tokens", c.filter.min_tokens);
      c.filter.max_tokens = f.value("max_tokens", c.filter.max_tokens);
      c.filter.min_chars = f.value("min_chars", c.filter.min_chars);
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      reject_unknown(s, {"caps", "pool_size", "silver", "gold", "fewshot", "seed"}, "sampling");
      if (s.contains("caps")) {
        reject_unknown(s["caps"], {"emergency", "selfcare", "urgent", "schedule"}, "sampling.caps");
        for (std::size_t b = 0; b < kNumBuckets; ++b)
          c.sampling.caps[b] = s["caps"].value(std::string(kBucketKeys[b]), c.sampling.caps[b]);
      }
      c.sampling.pool_size = s.value("pool_size", c.sampling.pool_size);
      c.sampling.silver_size = s.value("silver", c.sampling.silver_size);
      c.sampling.gold_size = s.value("gold", c.sampling.gold_size);
      c.sampling.fewshot_size = s.value("fewshot", c.sampling.fewshot_size);
      c.sampling.seed = s.value("seed", c.sampling.seed);
    }
    c.keywords = optional_path(j, "keywords", base_dir);
    if (j.contains("labels") && !j["labels"].is_null()) {
      const auto& l = j["labels"];
      reject_unknown(l, {"reference", "initial"}, "labels");
      c.labels = optional_path(l, "reference", base_dir);
      c.initial_labels = optional_path(l, "initial", base_dir);
    }
    if (j.contains("baseline")) {
      const auto& b = j["baseline"];
      reject_unknown(b, {"enabled", "conditions", "c_grid", "folds", "max_features", "max_iter", "tol"}, "baseline");
      c.baseline.enabled = b.value("enabled", c.baseline.enabled);
      c.baseline.conditions = b.value("conditions", c.baseline.conditions);
      c.baseline.c_grid = b.value("c_grid", c.baseline.c_grid);
      c.baseline.folds = b.value("folds", c.baseline.folds);
      c.baseline.max_features = b.value("max_features", c.baseline.max_features);
      c.baseline.max_iter = b.value("max_iter", c.baseline.max_iter);
      c.baseline.tol = b.value("tol", c.baseline.tol);
    }
    for (const auto& m : j.value("models", json::array())) {
      reject_unknown(m, {"name", "backend", "shots", "parallelism"}, "models[]");
      ModelSpec spec;
      spec.name = m.at("name").get<std::string>();
      spec.backend = BackendConfig::from_json(m.at("backend"));
      spec.shots = m.value("shots", spec.shots);
      spec.parallelism = m.value("parallelism", spec.parallelism);
      c.models.push_back(std::move(spec));
    }
    for (const auto& e : j.value("externals", json::array())) {
      reject_unknown(e, {"name", "path"}, "externals[]");
      c.externals.push_back({e.at("name").get<std::string>(), resolve(base_dir, e.at("path").get<std::string>())});
    }
    if (j.contains("prompt")) {
      const auto& p = j["prompt"];
      reject_unknown(p, {"template", "demonstrations_in_system", "preferred_demo_ids"}, "prompt");
      c.prompt.template_path = optional_path(p, "template", base_dir);
      c.prompt.demonstrations_in_system = p.value("demonstrations_in_system", false);
      c.prompt.preferred_demo_ids = p.value("preferred_demo_ids", std::vector<RecordId>{});
    }
    if (j.contains("evaluation")) {
      const auto& e = j["evaluation"];
      reject_unknown(e, {"replicates", "seed", "confidence", "threads"}, "evaluation");
      c.bootstrap.replicates = e.value("replicates", c.bootstrap.replicates);
      c.bootstrap.seed = e.value("seed", c.bootstrap.seed);
      c.bootstrap.confidence = e.value("confidence", c.bootstrap.confidence);
      c.bootstrap.threads = e.value("threads", c.bootstrap.threads);
    }
    if (j.contains("consensus")) {
      const auto& cs = j["consensus"];
      reject_unknown(cs, {"pairs"}, "consensus");
      for (const auto& p : cs.value("pairs", json::array())) {
        if (!p.is_array() || p.size() != 2) throw InputError("consensus.pairs entries must be [config, config]");
        c.consensus_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
      }
    }
    c.output_dir = resolve(base_dir, j.value("output_dir", std::string("run")));
    c.cache_dir = optional_path(j, "cache_dir", base_dir);
  } catch (const json::exception& e) {
    throw InputError(fmt::format("config: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw InputError(fmt::format("config: {}", e.what()));
  }
  return c;
}

json ExperimentConfig::to_json() const {
  auto opt = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
  json caps = json::object();
  for (std::size_t b = 0; b < kNumBuckets; ++b) caps[std::string(kBucketKeys[b])] = sampling.caps[b];
  json models_j = json::array();
  for (const auto& m : models)
    models_j.push_back({{"name", m.name}, {"backend", m.backend.to_json()}, {"shots", m.shots}, {"parallelism", m.parallelism}});
  json externals_j = json::array();
  for (const auto& e : externals) externals_j.push_back({{"name", e.name}, {"path", e.path.string()}});
  json pairs = json::array();
  for (const auto& [a, b] : consensus_pairs) pairs.push_back({a, b});
  return {{"corpus",
           {{"path", corpus_path.string()},
            {"format", corpus_format == CorpusFormat::Csv ? "csv" : "json-lines"},
            {"columns", {{"id", columns.id}, {"patient", columns.patient}, {"physician", columns.physician}}}}},
          {"filter", {{"min_tokens", filter.min_tokens}, {"max_tokens", filter.max_tokens}, {"min_chars", filter.min_chars}}},
          {"sampling",
           {{"caps", caps},
            {"pool_size", sampling.pool_size},
            {"silver", sampling.silver_size},
            {"gold", sampling.gold_size},
            {"fewshot", sampling.fewshot_size},
            {"seed", sampling.seed}}},
          {"keywords", opt(keywords)},
          {"labels", {{"reference", opt(labels)}, {"initial", opt(initial_labels)}}},
          {"baseline",
           {{"enabled", baseline.enabled},
            {"conditions", baseline.conditions},
            {"c_grid", baseline.c_grid},
            {"folds", baseline.folds},
            {"max_features", baseline.max_features},
            {"max_iter", baseline.max_iter},
            {"tol", baseline.tol}}},
          {"models", models_j},
          {"externals", externals_j},
          {"prompt",
           {{"template", opt(prompt.template_path)},
            {"demonstrations_in_system", prompt.demonstrations_in_system},
            {"preferred_demo_ids", prompt.preferred_demo_ids}}},
          {"evaluation",
           {{"replicates", bootstrap.replicates},
            {"seed", bootstrap.seed},
            {"confidence", bootstrap.confidence},
            {"threads", bootstrap.threads}}},
          {"consensus", {{"pairs", pairs}}},
          {"output_dir", output_dir.string()},
          {"cache_dir", opt(cache_dir)}};
}

std::vector<std::string> ExperimentConfig::planned_configs() const {
  std::vector<std::string> out;
  if (baseline.enabled)
    for (const auto& c : baseline.conditions) out.push_back(baseline_name(c) + "@baseline");
  for (const auto& m : models)
    for (int s : m.shots) out.push_back(fmt::format("{}@{}-shot", m.name, s));
  for (const auto& e : externals) out.push_back(e.name + "@external");
  return out;
}

void ExperimentConfig::validate() const {
  try {
    filter.validate();
    sampling.validate();
  } catch (const std::invalid_argument& e) {
    throw InputError(fmt::format("config: {}", e.what()));
  }
  auto must_exist = [](const fs::path& p, std::string_view what) {
    if (!fs::exists(p)) throw InputError(fmt::format("config: {} '{}' does not exist", what, p.string()));
  };
  must_exist(corpus_path, "corpus");
  if (keywords) must_exist(*keywords, "keyword file");
  if (labels) must_exist(*labels, "label file");
  if (initial_labels) must_exist(*initial_labels, "initial label file");
  if (prompt.template_path) must_exist(*prompt.template_path, "prompt template");
  for (const auto& e : externals) must_exist(e.path, fmt::format("prediction file for {}", e.name));

  if (baseline.enabled) {
    for (const auto& c : baseline.conditions)
      if (c != "default" && c != "balanced")
        throw InputError(fmt::format("config: baseline condition '{}' is not default or balanced", c));
    if (baseline.c_grid.empty()) throw InputError("config: baseline.c_grid is empty");
    for (double v : baseline.c_grid)
      if (!(v > 0)) throw InputError("config: baseline.c_grid entries must be positive");
    if (baseline.folds < 2) throw InputError("config: baseline.folds must be at least 2");
    if (baseline.max_features == 0) throw InputError("config: baseline.max_features must be positive");
  }
  std::set<std::string> names;
  for (const auto& m : models) {
    if (!valid_name(m.name)) throw InputError(fmt::format("config: model name '{}' must match [A-Za-z0-9._-]+", m.name));
    if (!names.insert(m.name).second) throw InputError(fmt::format("config: duplicate model name '{}'", m.name));
    if (m.shots.empty()) throw InputError(fmt::format("config: model {} has no prompt settings", m.name));
    for (int s : m.shots) PromptSetting::from_shots(s);
    if (m.parallelism == 0) throw InputError(fmt::format("config: model {} parallelism must be positive", m.name));
  }
  for (const auto& e : externals) {
    if (!valid_name(e.name)) throw InputError(fmt::format("config: external name '{}' must match [A-Za-z0-9._-]+", e.name));
    if (!names.insert(e.name).second) throw InputError(fmt::format("config: duplicate model name '{}'", e.name));
  }
  if (baseline.enabled)
    for (const auto& c : baseline.conditions)
      if (names.contains(baseline_name(c)))
        throw InputError(fmt::format("config: model name '{}' is reserved for the baseline", baseline_name(c)));
  auto planned = planned_configs();
  std::set<std::string> planned_set(planned.begin(), planned.end());
  for (const auto& [a, b] : consensus_pairs) {
    for (const auto* n : {&a, &b})
      if (!planned_set.contains(*n))
        throw InputError(fmt::format("config: consensus pair names unknown configuration '{}'", *n));
    if (a == b) throw InputError(fmt::format("config: consensus pair repeats '{}'", a));
  }
  if (bootstrap.replicates == 0) throw InputError("config: evaluation.replicates must be positive");
  if (!(bootstrap.confidence > 0 && bootstrap.confidence < 1)) throw InputError("config: evaluation.confidence must lie in (0,1)");
}

std::string ExperimentConfig::digest() const { return sha256_hex(to_json().dump()); }

void apply_override(json& j, std::string_view assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw InputError(fmt::format("override '{}' is not of the form key.path=value", assignment));
  std::string key(assignment.substr(0, eq));
  std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    auto dot = key.find('.', start);
    std::string seg = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (seg.empty()) throw InputError(fmt::format("override '{}' has an empty path segment", key));
    bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(seg);
      } catch (const std::exception&) {
        throw InputError(fmt::format("override '{}': '{}' is not an array index", key, seg));
      }
      if (idx >= node->size()) throw InputError(fmt::format("override '{}': index {} out of range", key, idx));
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw InputError(fmt::format("override '{}': '{}' is not an object", key, seg));
      node = &(*node)[seg];
    }
    if (last) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

ExperimentConfig load_experiment_config(const fs::path& path, const std::vector<std::string>& overrides,
                                        const std::optional<fs::path>& output_dir) {
  auto j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InputError(fmt::format("{}: not valid JSON", path.string()));
  for (const auto& o : overrides) apply_override(j, o);
  auto base = fs::absolute(path).parent_path();
  auto cfg = ExperimentConfig::from_json(j, base);
  if (output_dir) cfg.output_dir = fs::absolute(*output_dir).lexically_normal();
  cfg.validate();
  return cfg;
}

std::string_view to_string(Stage s) noexcept {
  switch (s) {
    case Stage::Filter: return "filter";
    case Stage::Sample: return "sample";
    case Stage::Split: return "split";
    case Stage::Train: return "train";
    case Stage::Classify: return "classify";
    case Stage::Ingest: return "ingest";
    case Stage::Evaluate: return "evaluate";
    case Stage::Consensus: return "consensus";
    case Stage::Report: return "report";
  }
  return "report";
}

Stage stage_from_string(std::string_view s) {
  for (auto st : kAllStages)
    if (to_string(st) == s) return st;
  throw InputError(fmt::format("unknown stage '{}'", s));
}

std::string StageRecord::output_digest() const { return sha256_hex(json(outputs).dump()); }

const StageRecord* RunManifest::find(std::string_view stage) const {
  for (const auto& s : stages)
    if (s.name == stage) return &s;
  return nullptr;
}

json RunManifest::to_json() const {
  json st = json::array();
  for (const auto& s : stages)
    st.push_back({{"name", s.name}, {"input_digest", s.input_digest}, {"outputs", s.outputs}, {"reused", s.reused}, {"stats", s.stats}});
  json j = {{"tool_version", tool_version}, {"config_digest", config_digest}, {"seeds", seeds},
            {"stages", st},                 {"started_at", started_at},      {"finished_at", finished_at}};
  if (!failed_stage.empty()) {
    j["failed_stage"] = failed_stage;
    j["error"] = error;
  }
  return j;
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.tool_version = j.value("tool_version", "");
  m.config_digest = j.value("config_digest", "");
  m.seeds = j.value("seeds", json::object());
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  m.failed_stage = j.value("failed_stage", "");
  m.error = j.value("error", "");
  for (const auto& s : j.value("stages", json::array())) {
    StageRecord r;
    r.name = s.at("name").get<std::string>();
    r.input_digest = s.at("input_digest").get<std::string>();
    r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
    r.reused = s.value("reused", false);
    r.stats = s.value("stats", json::object());
    m.stages.push_back(std::move(r));
  }
  return m;
}

namespace {

const std::map<Stage, std::vector<Stage>> kDeps = {
    {Stage::Filter, {}},
    {Stage::Sample, {Stage::Filter}},
    {Stage::Split, {Stage::Sample}},
    {Stage::Train, {Stage::Split}},
    {Stage::Classify, {Stage::Split}},
    {Stage::Ingest, {Stage::Split}},
    {Stage::Evaluate, {Stage::Train, Stage::Classify, Stage::Ingest}},
    {Stage::Consensus, {Stage::Evaluate}},
    {Stage::Report, {Stage::Evaluate, Stage::Consensus}},
};

bool needs_labels(Stage s) {
  return s == Stage::Train || s == Stage::Classify || s == Stage::Evaluate || s == Stage::Consensus ||
         s == Stage::Report;
}

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, const RunOptions& opts) : cfg_(cfg), opts_(opts), out_(cfg.output_dir) {
    manifest_.config_digest = cfg.digest();
    manifest_.seeds = {{"sampling", cfg.sampling.seed}, {"bootstrap", cfg.bootstrap.seed}, {"generator", DeterministicRng::kName}};
    manifest_.started_at = now_utc();
    auto mpath = out_ / "manifest.json";
    if (fs::exists(mpath)) {
      auto j = json::parse(read_file(mpath), nullptr, false);
      if (!j.is_discarded()) {
        try {
          previous_ = RunManifest::from_json(j);
        } catch (const std::exception&) {
        }
      }
    }
  }

  RunManifest run() {
    std::set<Stage> wanted;
    std::function<void(Stage)> want = [&](Stage s) {
      if (!wanted.insert(s).second) return;
      for (auto d : kDeps.at(s)) want(d);
    };
    if (opts_.target) {
      want(*opts_.target);
    } else {
      for (auto s : kAllStages) want(s);
    }
    for (auto s : kAllStages) {
      if (!wanted.contains(s)) continue;
      if (needs_labels(s) && !cfg_.labels) {
        if (opts_.target && needs_labels(*opts_.target))
          fail(s, fmt::format("stage {} needs labels.reference in the config", to_string(s)));
        log(fmt::format("labels.reference is not set; stopping after {}", to_string(Stage::Split)));
        break;
      }
      try {
        run_stage(s);
      } catch (const PipelineError&) {
        throw;
      } catch (const std::exception& e) {
        fail(s, e.what());
      }
    }
    manifest_.finished_at = now_utc();
    write_manifest();
    return manifest_;
  }

 private:
  [[noreturn]] void fail(Stage s, const std::string& what) {
    manifest_.failed_stage = std::string(to_string(s));
    manifest_.error = what;
    manifest_.finished_at = now_utc();
    write_manifest();
    throw PipelineError(std::string(to_string(s)), fmt::format("stage {} failed: {}", to_string(s), what));
  }

  void log(const std::string& msg) const {
    if (opts_.log) *opts_.log << msg << '\n';
  }

  void write_manifest() const { write_file_atomic(out_ / "manifest.json", manifest_.to_json().dump(2) + "\n"); }

  std::string write(const std::string& rel, std::string_view contents) {
    write_file_atomic(out_ / rel, contents);
    written_.push_back(rel);
    return rel;
  }

  std::string read(const std::string& rel) const { return read_file(out_ / rel); }

  const StageRecord& record(Stage s) const { return done_.at(s); }

  std::vector<std::string> outputs_with_prefix(Stage s, std::string_view prefix) const {
    std::vector<std::string> v;
    if (!done_.contains(s)) return v;
    for (const auto& [path, _] : done_.at(s).outputs)
      if (path.starts_with(prefix)) v.push_back(path);
    return v;
  }

  std::string file_digest(const fs::path& p) const { return sha256_hex(read_file(p)); }

  bool reusable(const StageRecord& prev, const std::string& digest) const {
    if (opts_.force || prev.input_digest != digest) return false;
    for (const auto& [rel, sha] : prev.outputs) {
      auto p = out_ / rel;
      if (!fs::exists(p) || file_digest(p) != sha) return false;
    }
    return true;
  }

  void run_stage(Stage s) {
    json inputs = stage_inputs(s);
    inputs["stage"] = to_string(s);
    inputs["tool_version"] = kToolVersion;
    const std::string digest = sha256_hex(inputs.dump());
    const auto* prev = previous_ ? previous_->find(to_string(s)) : nullptr;
    StageRecord rec;
    if (prev && reusable(*prev, digest)) {
      rec = *prev;
      rec.reused = true;
      rec.stats = json::object();
      log(fmt::format("[{}] reused", to_string(s)));
    } else {
      if (prev)
        for (const auto& [rel, _] : prev->outputs) fs::remove(out_ / rel);
      written_.clear();
      stats_ = json::object();
      execute(s);
      rec.name = std::string(to_string(s));
      rec.input_digest = digest;
      for (const auto& rel : written_) rec.outputs[rel] = file_digest(out_ / rel);
      rec.stats = stats_;
      log(fmt::format("[{}] wrote {} file(s)", to_string(s), rec.outputs.size()));
    }
    done_[s] = rec;
    manifest_.stages.push_back(rec);
    write_manifest();
  }

  json upstream(std::initializer_list<Stage> stages) const {
    json j = json::object();
    for (auto s : stages)
      if (done_.contains(s)) j[std::string(to_string(s))] = done_.at(s).output_digest();
    return j;
  }

  json labels_digest() const {
    json j = json::object();
    if (cfg_.labels) j["reference"] = file_digest(*cfg_.labels);
    if (cfg_.initial_labels) j["initial"] = file_digest(*cfg_.initial_labels);
    return j;
  }

  json stage_inputs(Stage s) const {
    const json c = cfg_.to_json();
    switch (s) {
      case Stage::Filter:
        return {{"corpus", file_digest(cfg_.corpus_path)}, {"format", c["corpus"]["format"]},
                {"columns", c["corpus"]["columns"]}, {"filter", c["filter"]}};
      case Stage::Sample:
        return {{"up", upstream({Stage::Filter})},
                {"corpus", file_digest(cfg_.corpus_path)},
                {"sampling", c["sampling"]},
                {"keywords", cfg_.keywords ? json(file_digest(*cfg_.keywords)) : json(nullptr)}};
      case Stage::Split: return {{"up", upstream({Stage::Sample})}, {"sampling", c["sampling"]}};
      case Stage::Train:
        return {{"up", upstream({Stage::Split})}, {"labels", labels_digest()}, {"baseline", c["baseline"]},
                {"corpus", file_digest(cfg_.corpus_path)}};
      case Stage::Classify: {
        json models = json::array();
        for (const auto& m : cfg_.models)
          models.push_back({{"name", m.name}, {"backend", m.backend.digest()}, {"shots", m.shots},
                            {"max_retries", m.backend.max_retries}});
        return {{"up", upstream({Stage::Split})},
                {"labels", labels_digest()},
                {"models", models},
                {"prompt", c["prompt"]},
                {"template", cfg_.prompt.template_path ? json(file_digest(*cfg_.prompt.template_path)) : json(nullptr)},
                {"corpus", file_digest(cfg_.corpus_path)}};
      }
      case Stage::Ingest: {
        json ext = json::array();
        for (const auto& e : cfg_.externals) ext.push_back({{"name", e.name}, {"file", file_digest(e.path)}});
        return {{"up", upstream({Stage::Split})}, {"externals", ext}};
      }
      case Stage::Evaluate:
        return {{"up", upstream({Stage::Split, Stage::Train, Stage::Classify, Stage::Ingest})},
                {"labels", labels_digest()},
                {"evaluation", c["evaluation"]}};
      case Stage::Consensus:
        return {{"up", upstream({Stage::Split, Stage::Train, Stage::Classify, Stage::Ingest, Stage::Evaluate})},
                {"labels", labels_digest()},
                {"evaluation", c["evaluation"]},
                {"consensus", c["consensus"]}};
      case Stage::Report: return {{"up", upstream({Stage::Evaluate, Stage::Consensus})}};
    }
    return json::object();
  }

  // ---- shared data ----

  const std::vector<InquiryRecord>& corpus() {
    if (!corpus_) corpus_ = load_corpus(cfg_.corpus_path, cfg_.corpus_format, cfg_.columns);
    return *corpus_;
  }

  const LabelMap& labels() {
    if (!labels_) labels_ = load_label_map(*cfg_.labels);
    return *labels_;
  }

  std::vector<RecordId> ids(const std::string& rel) const { return parse_id_list(read(rel)); }

  LabelMap gold_labels() {
    LabelMap g;
    std::vector<RecordId> missing;
    for (auto id : ids("split/gold_ids.txt")) {
      auto it = labels().find(id);
      if (it == labels().end()) missing.push_back(id);
      else g.emplace(id, it->second);
    }
    if (!missing.empty()) throw InputError(fmt::format("no reference label for gold ids: {}", fmt::join(missing, ", ")));
    return g;
  }

  std::vector<std::string> prediction_files() const {
    std::vector<std::string> v;
    for (auto s : {Stage::Train, Stage::Classify, Stage::Ingest})
      for (auto& p : outputs_with_prefix(s, "predictions/")) v.push_back(p);
    std::sort(v.begin(), v.end());
    return v;
  }

  // ---- stages ----

  void execute(Stage s) {
    switch (s) {
      case Stage::Filter: return do_filter();
      case Stage::Sample: return do_sample();
      case Stage::Split: return do_split();
      case Stage::Train: return do_train();
      case Stage::Classify: return do_classify();
      case Stage::Ingest: return do_ingest();
      case Stage::Evaluate: return do_evaluate();
      case Stage::Consensus: return do_consensus();
      case Stage::Report: return do_report();
    }
  }

  void do_filter() {
    auto outcome = quality_filter(corpus(), cfg_.filter);
    std::vector<RecordId> kept;
    for (const auto& r : outcome.kept) kept.push_back(r.id);
    write("filter/kept_ids.txt", format_id_list(kept));
    write("filter/report.json", filter_report(outcome, cfg_.filter).dump(2) + "\n");
    stats_ = {{"input", corpus().size()}, {"kept", outcome.kept.size()}, {"excluded", outcome.excluded.size()}};
  }

  std::vector<InquiryRecord> kept_records() {
    auto kept = ids("filter/kept_ids.txt");
    std::set<RecordId> keep(kept.begin(), kept.end());
    std::vector<InquiryRecord> out;
    for (const auto& r : corpus())
      if (keep.contains(r.id)) out.push_back(r);
    return out;
  }

  void do_sample() {
    auto records = kept_records();
    auto kw = cfg_.keywords ? load_keyword_overrides(*cfg_.keywords) : KeywordLists::defaults();
    auto assignments = assign_buckets(records, kw);
    auto pool = build_working_pool(records, assignments, cfg_.sampling);
    std::vector<RecordId> pool_ids;
    for (const auto& r : pool.records) pool_ids.push_back(r.id);
    auto splits = split_pool(pool_ids, cfg_.sampling);
    std::string csv = "id,bucket,score,low_priority\n";
    for (const auto& a : assignments)
      csv += fmt::format("{},{},{},{}\n", a.id, to_string(a.bucket), a.score, a.low_priority_emergency ? 1 : 0);
    write("sample/assignments.csv", csv);
    write("sample/pool_ids.txt", format_id_list(pool_ids));
    write("sample/manifest.json", sampling_manifest(pool, splits, cfg_.sampling, assignments).dump(2) + "\n");
  }

  void do_split() {
    auto splits = split_pool(ids("sample/pool_ids.txt"), cfg_.sampling);
    write("split/silver_ids.txt", format_id_list(splits.silver));
    write("split/gold_ids.txt", format_id_list(splits.gold));
    write("split/fewshot_ids.txt", format_id_list(splits.fewshot));
    json summary = {{"seed", cfg_.sampling.seed},
                    {"generator", DeterministicRng::kName},
                    {"silver", {{"n", splits.silver.size()}, {"digest", id_digest(splits.silver)}}},
                    {"gold", {{"n", splits.gold.size()}, {"digest", id_digest(splits.gold)}}},
                    {"fewshot", {{"n", splits.fewshot.size()}, {"digest", id_digest(splits.fewshot)}}}};
    write("split/summary.json", summary.dump(2) + "\n");
  }

  void do_train() {
    if (!cfg_.baseline.enabled) return;
    auto gold_ids = ids("split/gold_ids.txt");
    const auto gold_digest = id_digest(gold_ids);
    auto silver = TrainingSet::silver(join_labels(ids("split/silver_ids.txt"), corpus(), labels()));
    auto gold = join_labels(gold_ids, corpus(), labels());
    std::vector<LogRegConfig> grid;
    for (double c : cfg_.baseline.c_grid) grid.push_back({c, cfg_.baseline.max_iter, cfg_.baseline.tol});
    for (const auto& cond : cfg_.baseline.conditions) {
      TrainingSet data = cond == "balanced" ? balanced_downsample(silver) : silver;
      BaselineModel model;
      json cv = {{"condition", cond}, {"training_n", data.size()}, {"class_counts", data.class_counts()}};
      if (grid.size() == 1) {
        model = fit_baseline(data, grid.front(), cfg_.baseline.max_features);
        cv["cross_validation"] = "skipped: single candidate";
      } else {
        auto sel = cv_select(grid, data, cfg_.baseline.folds, cfg_.baseline.max_features);
        model = std::move(sel.refit);
        json cands = json::array();
        for (std::size_t i = 0; i < grid.size(); ++i)
          cands.push_back({{"C", grid[i].inverse_l2}, {"fold_macro_f1", sel.fold_scores[i]}, {"mean_macro_f1", sel.mean_scores[i]}});
        cv["cross_validation"] = {{"folds", cfg_.baseline.folds}, {"candidates", cands}, {"winner", sel.winner}};
      }
      if (model.tfidf.fit_corpus_digest == gold_digest)
        throw std::logic_error("vectorizer was fit on the evaluation split");
      cv["fit_corpus_digest"] = model.tfidf.fit_corpus_digest;
      cv["iterations"] = model.logreg.iterations;
      cv["final_loss"] = model.logreg.final_loss;
      cv["converged"] = model.logreg.converged;
      write(fmt::format("baseline/{}/model.json", cond), model.to_json().dump() + "\n");
      write(fmt::format("baseline/{}/training.json", cond), cv.dump(2) + "\n");
      auto preds = predict_labels(model, gold, baseline_name(cond), gold_digest);
      write(fmt::format("predictions/{}.json", preds.config_name()), to_json(preds).dump(2) + "\n");
    }
  }

  void do_classify() {
    if (cfg_.models.empty()) return;
    auto gold_ids = ids("split/gold_ids.txt");
    std::map<RecordId, const InquiryRecord*> by_id;
    for (const auto& r : corpus()) by_id.emplace(r.id, &r);
    std::vector<InquiryRecord> cases;
    for (auto id : gold_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InputError(fmt::format("gold id {} is absent from the corpus", id));
      cases.push_back(*it->second);
    }
    auto fewshot = join_labels(ids("split/fewshot_ids.txt"), corpus(), labels());

    PromptTemplate tmpl = cfg_.prompt.template_path ? PromptTemplate::load(*cfg_.prompt.template_path) : PromptTemplate{};
    tmpl.demonstrations_in_system = cfg_.prompt.demonstrations_in_system;
    ResponseCache cache(cfg_.cache_dir.value_or(out_ / "cache"));
    BackendFactory factory = opts_.backend_factory ? opts_.backend_factory
                                                   : BackendFactory([](const ModelSpec&) { return make_http_backend(); });

    std::map<int, std::vector<Demonstration>> demos;
    for (const auto& m : cfg_.models) {
      for (int shots : m.shots) {
        auto setting = PromptSetting::from_shots(shots);
        if (!demos.contains(shots)) {
          demos[shots] = shots == 0 ? std::vector<Demonstration>{}
                                    : select_demonstrations(fewshot, setting.per_class(), cfg_.prompt.preferred_demo_ids);
          json dj = json::array();
          for (const auto& d : demos[shots])
            dj.push_back({{"id", d.id}, {"label", to_string(d.label)}, {"rank", d.rank}, {"text", d.patient_text}});
          write(fmt::format("prompts/demonstrations-{}.json", setting.name()), dj.dump(2) + "\n");
        }
      }
      auto backend = factory(m);
      for (int shots : m.shots) {
        auto setting = PromptSetting::from_shots(shots);
        GatewayStats stats;
        JobOptions jo;
        jo.parallelism = m.parallelism;
        jo.prompt_template = tmpl;
        jo.model_name = m.name;
        auto preds = run_classification_job(m.backend, *backend, &cache, setting, cases, demos[shots], jo, &stats);
        write(fmt::format("predictions/{}.json", preds.config_name()), to_json(preds).dump(2) + "\n");
        stats_[preds.config_name()] = {{"requests", stats.requests.load()},
                                       {"cache_hits", stats.cache_hits.load()},
                                       {"retries", stats.retries.load()},
                                       {"transport_failures", stats.transport_failures.load()},
                                       {"parse_failures", preds.failures()}};
      }
    }
  }

  void do_ingest() {
    if (cfg_.externals.empty()) return;
    auto gold_ids = ids("split/gold_ids.txt");
    for (const auto& e : cfg_.externals) {
      auto preds = ingest_prediction_file(e.path, gold_ids, e.name);
      write(fmt::format("predictions/{}.json", preds.config_name()), to_json(preds).dump(2) + "\n");
      stats_[preds.config_name()] = {{"parse_failures", preds.failures()}};
    }
  }

  std::vector<PredictionSet> load_predictions() const {
    std::vector<PredictionSet> v;
    for (const auto& rel : prediction_files()) v.push_back(load_prediction_set(out_ / rel));
    return v;
  }

  void do_evaluate() {
    auto gold = gold_labels();
    auto sets = load_predictions();
    if (sets.empty()) throw InputError("no prediction sets to evaluate (enable the baseline, add models or externals)");
    const auto gold_digest = id_digest(ids("split/gold_ids.txt"));
    for (const auto& p : sets) {
      if (p.split_digest != gold_digest)
        throw EvaluationError(fmt::format("{} was produced on a different split", p.config_name()));
      auto e = evaluate_model(gold, p, cfg_.bootstrap);
      write(fmt::format("evaluation/{}.json", e.config_name), to_json(e).dump(2) + "\n");
    }
    json mc = json::array();
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t j = i + 1; j < sets.size(); ++j)
        mc.push_back(to_json(McNemarRow{sets[i].config_name(), sets[j].config_name(), mcnemar_test(gold, sets[i], sets[j])}));
    write("evaluation/mcnemar.json", mc.dump(2) + "\n");

    if (cfg_.initial_labels) {
      auto initial = load_label_map(*cfg_.initial_labels);
      json rows = json::array();
      for (const auto& [split, file] : {std::pair{"gold", "split/gold_ids.txt"}, std::pair{"fewshot", "split/fewshot_ids.txt"}}) {
        std::vector<TriageLabel> a, b;
        for (auto id : ids(file)) {
          auto i = initial.find(id);
          auto r = labels().find(id);
          if (i == initial.end() || r == labels().end()) continue;
          a.push_back(i->second);
          b.push_back(r->second);
        }
        if (a.empty()) continue;
        AgreementRow row;
        row.split = split;
        row.n = a.size();
        for (std::size_t k = 0; k < a.size(); ++k) (a[k] == b[k] ? row.retained : row.revised)++;
        row.kappa = cohens_kappa(a, b);
        rows.push_back(to_json(row));
      }
      write("evaluation/agreement.json", rows.dump(2) + "\n");
    }
  }

  std::vector<ModelEvaluation> load_evaluations() const {
    std::vector<ModelEvaluation> v;
    for (const auto& rel : outputs_with_prefix(Stage::Evaluate, "evaluation/")) {
      if (rel == "evaluation/mcnemar.json" || rel == "evaluation/agreement.json") continue;
      v.push_back(model_evaluation_from_json(json::parse(read(rel))));
    }
    return v;
  }

  void do_consensus() {
    auto gold = gold_labels();
    auto sets = load_predictions();
    std::map<std::string, const PredictionSet*> by_name;
    for (const auto& p : sets) by_name.emplace(p.config_name(), &p);

    std::vector<std::pair<std::string, std::string>> pairs = cfg_.consensus_pairs;
    if (pairs.empty()) {
      // Best prompt setting per prompted model, then every pair of models.
      std::map<std::string, const ModelEvaluation*> best;
      auto evals = load_evaluations();
      std::sort(evals.begin(), evals.end(), report_order);
      for (const auto& e : evals) {
        if (!e.setting.ends_with("-shot")) continue;
        auto it = best.find(e.model_name);
        if (it == best.end() || e.classification.macro_f1 > it->second->classification.macro_f1) best[e.model_name] = &e;
      }
      std::vector<std::string> picks;
      for (const auto& [_, e] : best) picks.push_back(e->config_name);
      for (std::size_t i = 0; i < picks.size(); ++i)
        for (std::size_t j = i + 1; j < picks.size(); ++j) pairs.emplace_back(picks[i], picks[j]);
    }
    std::vector<std::pair<const PredictionSet*, const PredictionSet*>> resolved;
    for (const auto& [a, b] : pairs) {
      if (!by_name.contains(a) || !by_name.contains(b))
        throw InputError(fmt::format("consensus pair {} + {} refers to a missing prediction set", a, b));
      resolved.emplace_back(by_name[a], by_name[b]);
    }
    json rows = json::array();
    for (const auto& r : pair_sweep(resolved, gold, cfg_.bootstrap)) rows.push_back(to_json(r));
    write("consensus/pairs.json", rows.dump(2) + "\n");
  }

  void do_report() {
    auto evals = load_evaluations();
    if (evals.empty()) throw InputError("no evaluated configurations to report");
    std::vector<McNemarRow> mc;
    for (const auto& j : json::parse(read("evaluation/mcnemar.json"))) mc.push_back(mcnemar_row_from_json(j));
    std::vector<AgreementRow> agreement;
    if (record(Stage::Evaluate).outputs.contains("evaluation/agreement.json"))
      for (const auto& j : json::parse(read("evaluation/agreement.json"))) agreement.push_back(agreement_row_from_json(j));
    std::vector<PairRow> pairs;
    for (const auto& j : json::parse(read("consensus/pairs.json"))) pairs.push_back(pair_row_from_json(j));

    std::vector<std::pair<std::string, Table>> tables = {
        {"model_performance", performance_table(evals)},
        {"safety_metrics", safety_table(evals)},
        {"prompt_sensitivity", prompt_sensitivity_table(evals)},
        {"model_pairs", pairs_table(pairs)},
        {"consensus_per_class", consensus_per_class_table(pairs)},
        {"mcnemar", mcnemar_table(mc)},
    };
    if (!agreement.empty()) tables.emplace_back("agreement", agreement_table(agreement));
    std::string combined = "# Triage benchmark report\n\n";
    for (const auto& [name, t] : tables) {
      write(fmt::format("report/{}.csv", name), t.to_csv());
      write(fmt::format("report/{}.md", name), t.to_markdown());
      combined += t.to_markdown() + "\n";
    }
    combined += "![macro-F1 versus under-triage](tradeoff.svg)\n";
    write("report/tradeoff.svg", tradeoff_svg(evals));
    write("report/report.md", combined);
  }

  const ExperimentConfig& cfg_;
  RunOptions opts_;
  fs::path out_;
  RunManifest manifest_;
  std::optional<RunManifest> previous_;
  std::map<Stage, StageRecord> done_;
  std::vector<std::string> written_;
  json stats_ = json::object();
  std::optional<std::vector<InquiryRecord>> corpus_;
  std::optional<LabelMap> labels_;
};

}  // namespace

RunManifest run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  Runner runner(cfg, options);
  return runner.run();
}

CompareResult compare_runs(const LabelMap& gold, const PredictionSet& a, const PredictionSet& b) {
  if (a.split_digest != b.split_digest)
    throw EvaluationError(fmt::format("{} and {} were evaluated on different gold splits", a.config_name(), b.config_name()));
  CompareResult r;
  r.config_a = a.config_name();
  r.config_b = b.config_name();
  r.mcnemar = mcnemar_test(gold, a, b);
  auto ca = align(gold, a), cb = align(gold, b);
  const std::array<Metric, 7> metrics = {Metric::MacroF1,        Metric::Accuracy,          Metric::UnderTriage,
                                         Metric::SevereUnderTriage, Metric::OverTriage,     Metric::UrgentOrHigherRecall,
                                         Metric::EmergencyRecall};
  for (auto m : metrics) {
    auto va = compute_metric(m, ca), vb = compute_metric(m, cb);
    r.deltas[std::string(to_string(m))] = va && vb ? std::optional<double>(*vb - *va) : std::nullopt;
  }
  r.deltas["parse_fail_rate"] = parse_fail_rate(b) - parse_fail_rate(a);
  return r;
}

json to_json(const CompareResult& r) {
  json deltas = json::object();
  for (const auto& [k, v] : r.deltas) deltas[k] = v ? json(*v) : json(nullptr);
  return {{"config_a", r.config_a}, {"config_b", r.config_b}, {"mcnemar", to_json(r.mcnemar)}, {"deltas_b_minus_a", deltas}};
}

}  // namespace triage
