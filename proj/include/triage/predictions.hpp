#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/dataset.hpp"
#include "triage/schema.hpp"

namespace triage {

/// One model configuration's outputs over one evaluation split. Failures are
/// kept as entries so that every case id is present.
struct PredictionSet {
  std::string model_name;
  std::string setting;       // "0-shot", "4-shot", "12-shot", "external" or "baseline"
  std::string split_digest;  // id_digest of the evaluated split
  std::map<RecordId, ParseOutcome> entries;
  nlohmann::json manifest = nlohmann::json::object();

  /// "<model>@<setting>", the key used in reports.
  std::string config_name() const;

  std::size_t failures() const noexcept;
};

nlohmann::json to_json(const PredictionSet& set);
PredictionSet prediction_set_from_json(const nlohmann::json& j);

void save_prediction_set(const PredictionSet& set, const std::filesystem::path& path);
PredictionSet load_prediction_set(const std::filesystem::path& path);

/// Reads externally produced predictions (`id,label` csv or json-lines).
/// Each label goes through normalize_label; unmappable labels become
/// ParseFailure entries. Ids missing from or foreign to `split_ids` are an
/// error listing them.
PredictionSet ingest_prediction_file(const std::filesystem::path& path,
                                     const std::vector<RecordId>& split_ids,
                                     const std::string& model_name);

}  // namespace triage
