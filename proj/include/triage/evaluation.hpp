#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/dataset.hpp"
#include "triage/predictions.hpp"

namespace triage {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A gold label paired with a prediction; `predicted` is empty for parse failures.
struct ScoredCase {
  TriageLabel gold = TriageLabel::SelfCare;
  std::optional<TriageLabel> predicted;
};

/// Aligns predictions to gold by id (ascending). Every prediction id must have
/// a gold label.
std::vector<ScoredCase> align(const LabelMap& gold, const PredictionSet& preds);

/// rows = gold, cols = predicted, both in severity order.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> counts{};
  std::size_t valid_n = 0;
};

struct ClassificationMetrics {
  ConfusionMatrix confusion;
  std::array<double, kNumLabels> precision{};
  std::array<double, kNumLabels> recall{};
  std::array<double, kNumLabels> f1{};  // 0 when 2PR/(P+R) has a zero denominator
  double macro_f1 = 0.0;                // unweighted over all four classes
  double accuracy = 0.0;
};

/// Parse failures are excluded. Throws EvaluationError when nothing is valid.
ClassificationMetrics confusion_and_f1(std::span<const ScoredCase> cases);
ClassificationMetrics confusion_and_f1(const LabelMap& gold, const PredictionSet& preds);

/// Directional error rates over valid cases. Recall fields are empty when
/// their denominator is zero.
struct SafetyMetrics {
  std::size_t valid_n = 0;
  double under_triage_rate = 0.0;
  double severe_under_triage_rate = 0.0;  // severity gap >= 2
  double over_triage_rate = 0.0;
  double exact_rate = 0.0;
  std::optional<double> urgent_or_higher_recall;
  std::optional<double> emergency_recall;
  std::size_t emergency_false_negatives = 0;
};

SafetyMetrics safety_metrics(std::span<const ScoredCase> cases);
SafetyMetrics safety_metrics(const LabelMap& gold, const PredictionSet& preds);

struct KappaResult {
  std::optional<double> kappa;  // empty when expected agreement is 1
  double observed_agreement = 0.0;
  double expected_agreement = 0.0;
  std::size_t n = 0;
  std::string note;
};

/// Cohen's kappa over the four-class label space.
KappaResult cohens_kappa(std::span<const TriageLabel> a, std::span<const TriageLabel> b);

/// Scalar metrics addressable by name for bootstrap intervals and reports.
enum class Metric {
  MacroF1,
  Accuracy,
  F1SelfCare,
  F1ScheduleVisit,
  F1Urgent,
  F1Emergency,
  UnderTriage,
  SevereUnderTriage,
  OverTriage,
  UrgentOrHigherRecall,
  EmergencyRecall,
};

std::string_view to_string(Metric m) noexcept;
Metric metric_from_string(std::string_view name);

/// Metric value or empty when undefined on these cases.
std::optional<double> compute_metric(Metric m, std::span<const ScoredCase> cases);

struct BootstrapOptions {
  std::size_t replicates = 1000;
  std::uint64_t seed = 42;
  double confidence = 0.95;
  unsigned threads = 1;
};

struct BootstrapCI {
  std::optional<double> point;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t replicates = 0;
  std::size_t skipped = 0;  // replicates where the metric was undefined
  std::uint64_t seed = 0;
};

/// Statistic over a resample, given as case indices; empty when undefined.
using ResampleStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Percentile bootstrap over cases. Replicate r draws from its own substream
/// of the seed, so the result does not depend on `threads`. Percentiles use
/// linear interpolation between order statistics.
BootstrapCI bootstrap_ci(std::size_t n_cases, const ResampleStatistic& statistic,
                         const BootstrapOptions& options = {});

/// Case-level bootstrap of a named metric; parse failures are resampled with
/// their cases. Requires at least two valid cases.
BootstrapCI bootstrap_ci(std::span<const ScoredCase> cases, Metric metric,
                         const BootstrapOptions& options = {});

enum class McNemarMethod { ExactBinomial, ContinuityCorrected };

std::string_view to_string(McNemarMethod m) noexcept;

struct McNemarResult {
  std::size_t b = 0;  // a correct, b wrong
  std::size_t c = 0;  // a wrong, b correct
  std::size_t n = 0;
  double statistic = 0.0;
  double p_value = 1.0;
  McNemarMethod method = McNemarMethod::ExactBinomial;
};

inline constexpr std::size_t kMcNemarExactBelow = 25;

/// Exact two-sided binomial test when b + c < 25, otherwise the
/// continuity-corrected chi-square with one degree of freedom.
McNemarResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b);

/// McNemar over cases valid for both prediction sets.
McNemarResult mcnemar_test(const LabelMap& gold, const PredictionSet& a, const PredictionSet& b);

/// Failures over all entries. Throws on an empty set.
double parse_fail_rate(const PredictionSet& preds);

/// Everything reported for one model configuration.
struct ModelEvaluation {
  std::string config_name;
  std::string model_name;
  std::string setting;
  std::size_t n_total = 0;
  std::size_t valid_n = 0;
  double parse_fail_rate = 0.0;
  std::size_t lenient_n = 0;
  ClassificationMetrics classification;
  SafetyMetrics safety;
  std::map<Metric, BootstrapCI> intervals;
};

ModelEvaluation evaluate_model(const LabelMap& gold, const PredictionSet& preds,
                               const BootstrapOptions& options);

nlohmann::json to_json(const ModelEvaluation& e);
ModelEvaluation model_evaluation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BootstrapCI& ci);
BootstrapCI bootstrap_ci_from_json(const nlohmann::json& j);
nlohmann::json to_json(const McNemarResult& r);

}  // namespace triage
