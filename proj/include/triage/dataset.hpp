#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "triage/corpus.hpp"
#include "triage/schema.hpp"

namespace triage {

/// A record paired with its reference label.
struct LabeledRecord {
  RecordId id = 0;
  std::string text;
  TriageLabel label = TriageLabel::SelfCare;
};

using LabelMap = std::map<RecordId, TriageLabel>;

/// Reads `id,label` csv (header required) or json-lines `{"id":..,"label":..}`.
/// Labels go through normalize_label; any unmappable label is an error since
/// reference labels must be valid.
LabelMap load_label_map(const std::filesystem::path& path);
LabelMap parse_label_map(std::string_view contents, bool jsonl);

/// Joins ids with corpus text and labels; every id must be present in both.
std::vector<LabeledRecord> join_labels(const std::vector<RecordId>& ids,
                                       const std::vector<InquiryRecord>& corpus,
                                       const LabelMap& labels);

/// Stable digest of an ordered id list.
std::string id_digest(const std::vector<RecordId>& ids);

}  // namespace triage
