#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "triage/baseline.hpp"
#include "triage/corpus.hpp"
#include "triage/evaluation.hpp"
#include "triage/gateway.hpp"
#include "triage/sampler.hpp"

namespace triage {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct ModelSpec {
  std::string name;
  BackendConfig backend;
  std::vector<int> shots = {0, 4, 12};
  unsigned parallelism = 4;
};

/// Predictions produced elsewhere, read as `id,label` csv or json-lines.
struct ExternalSpec {
  std::string name;
  std::filesystem::path path;
};

struct BaselineSpec {
  bool enabled = true;
  std::vector<std::string> conditions = {"default", "balanced"};
  std::vector<double> c_grid = {1.0};  // a single entry skips cross-validation
  std::size_t folds = 5;
  std::size_t max_features = kMaxTfidfFeatures;
  int max_iter = 1000;
  double tol = 1e-4;
};

struct PromptSpec {
  std::optional<std::filesystem::path> template_path;
  bool demonstrations_in_system = false;
  std::vector<RecordId> preferred_demo_ids;
};

struct ExperimentConfig {
  std::filesystem::path corpus_path;
  CorpusFormat corpus_format = CorpusFormat::JsonLines;
  CorpusColumns columns;
  FilterConfig filter;
  SamplingPlan sampling;
  std::optional<std::filesystem::path> keywords;
  std::optional<std::filesystem::path> labels;          // reference labels, id,label
  std::optional<std::filesystem::path> initial_labels;  // pre-calibration labels for agreement
  BaselineSpec baseline;
  std::vector<ModelSpec> models;
  std::vector<ExternalSpec> externals;
  PromptSpec prompt;
  BootstrapOptions bootstrap;
  std::vector<std::pair<std::string, std::string>> consensus_pairs;  // empty: automatic
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cache_dir;  // default <output_dir>/cache

  /// Relative paths resolve against `base_dir`. Unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  nlohmann::json to_json() const;

  /// Checks value invariants and that every referenced file exists.
  void validate() const;
  std::string digest() const;

  /// Config names ("model@setting") the roster will produce.
  std::vector<std::string> planned_configs() const;
};

/// Sets `dotted.path=value`; the value is parsed as JSON when it parses,
/// otherwise taken as a string. Numeric segments index arrays.
void apply_override(nlohmann::json& j, std::string_view assignment);

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {},
                                        const std::optional<std::filesystem::path>& output_dir = std::nullopt);

enum class Stage { Filter, Sample, Split, Train, Classify, Ingest, Evaluate, Consensus, Report };

inline constexpr std::array<Stage, 9> kAllStages = {Stage::Filter,   Stage::Sample, Stage::Split,
                                                    Stage::Train,    Stage::Classify, Stage::Ingest,
                                                    Stage::Evaluate, Stage::Consensus, Stage::Report};

std::string_view to_string(Stage s) noexcept;
Stage stage_from_string(std::string_view s);

struct StageRecord {
  std::string name;
  std::string input_digest;
  std::map<std::string, std::string> outputs;  // path relative to the run dir -> sha256
  bool reused = false;
  nlohmann::json stats = nlohmann::json::object();

  /// Digest over the output listing; feeds downstream input digests.
  std::string output_digest() const;
};

struct RunManifest {
  std::string tool_version = std::string(kToolVersion);
  std::string config_digest;
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<StageRecord> stages;
  std::string started_at;
  std::string finished_at;
  std::string failed_stage;
  std::string error;

  const StageRecord* find(std::string_view stage) const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

using BackendFactory = std::function<std::unique_ptr<Backend>(const ModelSpec&)>;

struct RunOptions {
  std::optional<Stage> target;  // run up to this stage and its prerequisites; empty runs all
  BackendFactory backend_factory;  // defaults to the HTTP client
  std::ostream* log = nullptr;
  bool force = false;  // ignore reusable stage outputs
};

/// Runs the needed stages in order, reusing any stage whose input digest and
/// recorded outputs are unchanged. The manifest lands at
/// <output_dir>/manifest.json after every stage. A failing stage raises
/// PipelineError after the manifest records the completed stages.
RunManifest run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

struct CompareResult {
  std::string config_a;
  std::string config_b;
  McNemarResult mcnemar;
  std::map<std::string, std::optional<double>> deltas;  // b minus a
};

/// McNemar on jointly valid cases plus metric deltas. Prediction sets from
/// different splits are rejected.
CompareResult compare_runs(const LabelMap& gold, const PredictionSet& a, const PredictionSet& b);
nlohmann::json to_json(const CompareResult& r);

}  // namespace triage
