#include "triage/predictions.hpp"

#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "triage/io.hpp"

namespace triage {

std::string PredictionSet::config_name() const {
  return fmt::format("{}@{}", model_name, setting);
}

std::size_t PredictionSet::failures() const noexcept {
  std::size_t n = 0;
  for (const auto& [id, o] : entries)
    if (!is_valid(o)) ++n;
  return n;
}

nlohmann::json to_json(const PredictionSet& set) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [id, outcome] : set.entries) {
    if (const auto* p = std::get_if<StructuredPrediction>(&outcome)) {
      entries.push_back({{"id", id},
                         {"status", "valid"},
                         {"label", to_string(p->label)},
                         {"confidence", to_string(p->confidence)},
                         {"insufficient_info", p->insufficient_info},
                         {"lenient", p->leniently_parsed},
                         {"raw", p->raw_text}});
    } else {
      const auto& f = std::get<ParseFailure>(outcome);
      nlohmann::json e = {{"id", id}, {"status", "parse-failure"}, {"reason", to_string(f.reason)}, {"raw", f.raw_text}};
      if (!f.note.empty()) e["note"] = f.note;
      entries.push_back(std::move(e));
    }
  }
  return {{"kind", "prediction-set"},
          {"model", set.model_name},
          {"setting", set.setting},
          {"split_digest", set.split_digest},
          {"manifest", set.manifest},
          {"entries", std::move(entries)}};
}

PredictionSet prediction_set_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "prediction-set") throw InputError("not a prediction-set document");
  PredictionSet set;
  set.model_name = j.at("model").get<std::string>();
  set.setting = j.at("setting").get<std::string>();
  set.split_digest = j.at("split_digest").get<std::string>();
  set.manifest = j.value("manifest", nlohmann::json::object());
  for (const auto& e : j.at("entries")) {
    auto id = e.at("id").get<RecordId>();
    ParseOutcome outcome;
    if (e.at("status") == "valid") {
      auto label = label_from_canonical(e.at("label").get<std::string>());
      if (!label) throw InputError(fmt::format("entry {}: invalid label", id));
      StructuredPrediction p;
      p.label = *label;
      p.confidence = confidence_from_string(e.value("confidence", "unknown")).value_or(Confidence::Unknown);
      p.insufficient_info = e.value("insufficient_info", false);
      p.leniently_parsed = e.value("lenient", false);
      p.raw_text = e.value("raw", "");
      outcome = std::move(p);
    } else {
      ParseFailure f;
      f.reason = parse_failure_reason_from_string(e.value("reason", "")).value_or(ParseFailureReason::NoObjectFound);
      f.raw_text = e.value("raw", "");
      f.note = e.value("note", "");
      outcome = std::move(f);
    }
    if (!set.entries.emplace(id, std::move(outcome)).second)
      throw InputError(fmt::format("duplicate entry for id {}", id));
  }
  return set;
}

void save_prediction_set(const PredictionSet& set, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(set).dump(2) + "\n");
}

PredictionSet load_prediction_set(const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw InputError(fmt::format("{}: not valid JSON", path.string()));
  try {
    return prediction_set_from_json(j);
  } catch (const std::exception& e) {
    throw InputError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

PredictionSet ingest_prediction_file(const std::filesystem::path& path,
                                     const std::vector<RecordId>& split_ids,
                                     const std::string& model_name) {
  const std::string contents = read_file(path);
  std::map<RecordId, std::string> raw;
  auto add = [&](RecordId id, std::string label, std::size_t line) {
    if (!raw.emplace(id, std::move(label)).second)
      throw InputError(fmt::format("{}: line {}: duplicate id {}", path.string(), line, id));
  };
  const bool jsonl = path.extension() == ".jsonl" || path.extension() == ".json";
  if (jsonl) {
    for (const auto& [line, text] : read_nonempty_lines(contents)) {
      auto obj = nlohmann::json::parse(text, nullptr, false);
      if (obj.is_discarded() || !obj.is_object() || !obj.contains("id") || !obj["id"].is_number_integer())
        throw InputError(fmt::format("{}: line {}: expected an object with integer id", path.string(), line));
      std::string label = obj.contains("label") && obj["label"].is_string() ? obj["label"].get<std::string>()
                                                                           : obj.value("label", nlohmann::json()).dump();
      add(obj["id"].get<RecordId>(), std::move(label), line);
    }
  } else {
    auto rows = parse_csv(contents);
    if (rows.empty() || rows.front().fields.size() < 2 || rows.front().fields[0] != "id" ||
        rows.front().fields[1] != "label")
      throw InputError(fmt::format("{}: expected csv header 'id,label'", path.string()));
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      if (row.fields.size() < 2) throw InputError(fmt::format("{}: line {}: expected id,label", path.string(), row.line));
      RecordId id = 0;
      try {
        id = std::stoll(row.fields[0]);
      } catch (const std::exception&) {
        throw InputError(fmt::format("{}: line {}: id is not an integer", path.string(), row.line));
      }
      add(id, row.fields[1], row.line);
    }
  }

  std::set<RecordId> expected(split_ids.begin(), split_ids.end());
  std::vector<RecordId> missing, foreign;
  for (auto id : expected)
    if (!raw.contains(id)) missing.push_back(id);
  for (const auto& [id, _] : raw)
    if (!expected.contains(id)) foreign.push_back(id);
  if (!missing.empty())
    throw InputError(fmt::format("{}: missing predictions for ids: {}", path.string(), fmt::join(missing, ", ")));
  if (!foreign.empty())
    throw InputError(fmt::format("{}: ids not in the evaluation split: {}", path.string(), fmt::join(foreign, ", ")));

  PredictionSet set;
  set.model_name = model_name;
  set.setting = "external";
  set.split_digest = id_digest(split_ids);
  set.manifest = {{"source_file", path.filename().string()}, {"source_digest", sha256_hex(contents)}};
  for (auto& [id, label] : raw) {
    auto norm = normalize_label(label);
    if (auto* l = std::get_if<TriageLabel>(&norm)) {
      set.entries.emplace(id, StructuredPrediction{*l, Confidence::Unknown, false, label, false});
    } else {
      set.entries.emplace(id, std::get<ParseFailure>(std::move(norm)));
    }
  }
  return set;
}

}  // namespace triage
