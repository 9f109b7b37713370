#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/consensus.hpp"
#include "triage/evaluation.hpp"

namespace triage {

struct Table {
  std::string title;
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Fixed four-decimal rendering; empty values become "NA".
std::string format_number(std::optional<double> v, int decimals = 4);

struct McNemarRow {
  std::string config_a;
  std::string config_b;
  McNemarResult result;
};

nlohmann::json to_json(const McNemarRow& row);
McNemarRow mcnemar_row_from_json(const nlohmann::json& j);

/// Initial-versus-reference label agreement for one split.
struct AgreementRow {
  std::string split;
  std::size_t n = 0;
  std::size_t retained = 0;
  std::size_t revised = 0;
  KappaResult kappa;
};

nlohmann::json to_json(const AgreementRow& row);
AgreementRow agreement_row_from_json(const nlohmann::json& j);

/// Sort key for report rows: model name, then 0/4/12-shot, then other settings.
bool report_order(const ModelEvaluation& a, const ModelEvaluation& b);

Table performance_table(const std::vector<ModelEvaluation>& evals);
Table safety_table(const std::vector<ModelEvaluation>& evals);
/// Few-shot settings grouped per model, followed by the per-setting mean
/// over models.
Table prompt_sensitivity_table(const std::vector<ModelEvaluation>& evals);
Table pairs_table(const std::vector<PairRow>& rows);
Table consensus_per_class_table(const std::vector<PairRow>& rows);
Table mcnemar_table(const std::vector<McNemarRow>& rows);
Table agreement_table(const std::vector<AgreementRow>& rows);

/// Scatter of macro-F1 (x) against under-triage rate (y) over [0,1] x [0,1],
/// one labeled point per configuration. The y axis runs downward from 0 so
/// better configurations sit toward the upper right.
std::string tradeoff_svg(const std::vector<ModelEvaluation>& evals);

}  // namespace triage
