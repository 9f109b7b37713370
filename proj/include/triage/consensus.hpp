#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/evaluation.hpp"

namespace triage {

enum class Verdict { AutoAccept, Escalate };
enum class ConsensusReason { Agreement, Disagreement, InvalidOutput };

std::string_view to_string(Verdict v) noexcept;
std::string_view to_string(ConsensusReason r) noexcept;

struct ConsensusDecision {
  RecordId id = 0;
  Verdict verdict = Verdict::Escalate;
  std::optional<TriageLabel> label;  // set only on auto-accept
  ConsensusReason reason = ConsensusReason::InvalidOutput;
};

/// Valid and equal predictions are auto-accepted; anything else escalates.
/// Both sets must cover the same ids. Output is ordered by id.
std::vector<ConsensusDecision> decide_consensus(const PredictionSet& a, const PredictionSet& b);

struct ConsensusReport {
  std::size_t n = 0;
  std::size_t accepted = 0;
  std::size_t escalated = 0;
  std::size_t invalid_escalations = 0;
  double escalation_rate = 0.0;
  double invalid_escalation_rate = 0.0;  // invalid-output escalations over n
  std::optional<double> consensus_accuracy;
  std::optional<double> consensus_macro_f1;
  double oracle_hitl_macro_f1 = 0.0;
  double oracle_hitl_accuracy = 0.0;
  // Accepted cases whose agreed label is class k, fraction correct.
  std::array<std::optional<double>, kNumLabels> consensus_accuracy_by_prediction{};
  // Accepted cases whose gold label is class k, fraction correct.
  std::array<std::optional<double>, kNumLabels> consensus_accuracy_by_gold{};
  std::array<std::size_t, kNumLabels> accepted_by_prediction{};
  std::array<double, kNumLabels> oracle_hitl_f1{};
};

/// Escalated cases take the gold label in the oracle view. Consensus metrics
/// stay empty when nothing was accepted.
ConsensusReport consensus_report(const LabelMap& gold, const std::vector<ConsensusDecision>& decisions);

/// Accuracy over every case with invalid outputs counted wrong.
double full_cohort_accuracy(const LabelMap& gold, const PredictionSet& preds);

struct PairRow {
  std::string model_a;
  std::string model_b;
  std::string best_single;  // config name of the better single model
  double best_single_macro_f1 = 0.0;
  ConsensusReport report;
  // Keys: best_single_macro_f1, escalation_rate, consensus_accuracy,
  // consensus_macro_f1, oracle_hitl_macro_f1, oracle_hitl_accuracy. A key is
  // absent when the statistic is undefined on every replicate.
  std::map<std::string, BootstrapCI> intervals;
};

/// One row per pair. The better single model is chosen on the full sample by
/// macro-F1 (first of the pair on ties) and its interval is bootstrapped with
/// that choice fixed.
std::vector<PairRow> pair_sweep(const std::vector<std::pair<const PredictionSet*, const PredictionSet*>>& pairs,
                                const LabelMap& gold, const BootstrapOptions& options);

nlohmann::json to_json(const ConsensusReport& r);
nlohmann::json to_json(const PairRow& row);
PairRow pair_row_from_json(const nlohmann::json& j);

}  // namespace triage
