#pragma once

// Small builders for label maps and prediction sets from severity vectors.

#include <string>
#include <vector>

#include "triage/dataset.hpp"
#include "triage/predictions.hpp"

namespace testsupport {

inline triage::TriageLabel L(int level) { return triage::label_of(triage::Severity{level}); }

/// Gold labels for ids 1..n.
inline triage::LabelMap gold_map(const std::vector<int>& levels) {
  triage::LabelMap m;
  for (std::size_t i = 0; i < levels.size(); ++i) m.emplace(static_cast<triage::RecordId>(i + 1), L(levels[i]));
  return m;
}

inline std::vector<triage::RecordId> ids_for(std::size_t n) {
  std::vector<triage::RecordId> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<triage::RecordId>(i + 1));
  return v;
}

/// Predictions for ids 1..n; -1 becomes a parse failure.
inline triage::PredictionSet pred_set(const std::vector<int>& levels, std::string model = "m",
                                      std::string setting = "0-shot") {
  triage::PredictionSet s;
  s.model_name = std::move(model);
  s.setting = std::move(setting);
  s.split_digest = triage::id_digest(ids_for(levels.size()));
  for (std::size_t i = 0; i < levels.size(); ++i) {
    auto id = static_cast<triage::RecordId>(i + 1);
    if (levels[i] < 0)
      s.entries.emplace(id, triage::ParseFailure{"garbage", triage::ParseFailureReason::NoObjectFound, {}});
    else
      s.entries.emplace(id, triage::StructuredPrediction{L(levels[i]), triage::Confidence::High, false,
                                                         std::string(triage::to_string(L(levels[i]))), false});
  }
  return s;
}

}  // namespace testsupport
