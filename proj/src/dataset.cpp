#include "triage/dataset.hpp"

#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "triage/io.hpp"

namespace triage {

namespace {

TriageLabel require_label(const std::string& raw, std::size_t line) {
  auto norm = normalize_label(raw);
  if (auto* l = std::get_if<TriageLabel>(&norm)) return *l;
  throw InputError(fmt::format("line {}: '{}' is not one of the four triage labels", line, raw));
}

void insert_unique(LabelMap& out, RecordId id, TriageLabel label, std::size_t line) {
  if (!out.emplace(id, label).second)
    throw InputError(fmt::format("line {}: duplicate id {}", line, id));
}

}  // namespace

LabelMap parse_label_map(std::string_view contents, bool jsonl) {
  LabelMap out;
  if (jsonl) {
    for (const auto& [line, text] : read_nonempty_lines(contents)) {
      auto obj = nlohmann::json::parse(text, nullptr, false);
      if (obj.is_discarded() || !obj.is_object() || !obj.contains("id") || !obj.contains("label") ||
          !obj["label"].is_string())
        throw InputError(fmt::format("line {}: expected {{\"id\":..,\"label\":\"..\"}}", line));
      RecordId id = 0;
      if (obj["id"].is_number_integer()) {
        id = obj["id"].get<RecordId>();
      } else if (obj["id"].is_string()) {
        try {
          id = std::stoll(obj["id"].get<std::string>());
        } catch (const std::exception&) {
          throw InputError(fmt::format("line {}: id is not an integer", line));
        }
      } else {
        throw InputError(fmt::format("line {}: id is not an integer", line));
      }
      insert_unique(out, id, require_label(obj["label"].get<std::string>(), line), line);
    }
    return out;
  }
  auto rows = parse_csv(contents);
  if (rows.empty()) throw InputError("label file is empty");
  const auto& header = rows.front().fields;
  std::size_t id_col = header.size(), label_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "id") id_col = i;
    if (header[i] == "label") label_col = i;
  }
  if (id_col == header.size()) throw InputError("label csv header lacks column 'id'");
  if (label_col == header.size()) throw InputError("label csv header lacks column 'label'");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.size())
      throw InputError(fmt::format("line {}: expected {} fields", row.line, header.size()));
    RecordId id = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(row.fields[id_col], &used);
      if (used != row.fields[id_col].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw InputError(fmt::format("line {}: id '{}' is not an integer", row.line, row.fields[id_col]));
    }
    insert_unique(out, id, require_label(row.fields[label_col], row.line), row.line);
  }
  return out;
}

LabelMap load_label_map(const std::filesystem::path& path) {
  bool jsonl = path.extension() == ".jsonl" || path.extension() == ".json";
  try {
    return parse_label_map(read_file(path), jsonl);
  } catch (const InputError& e) {
    throw InputError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<LabeledRecord> join_labels(const std::vector<RecordId>& ids,
                                       const std::vector<InquiryRecord>& corpus,
                                       const LabelMap& labels) {
  std::unordered_map<RecordId, const InquiryRecord*> by_id;
  for (const auto& r : corpus) by_id.emplace(r.id, &r);
  std::vector<LabeledRecord> out;
  std::vector<RecordId> missing_text, missing_label;
  for (auto id : ids) {
    auto t = by_id.find(id);
    auto l = labels.find(id);
    if (t == by_id.end()) missing_text.push_back(id);
    if (l == labels.end()) missing_label.push_back(id);
    if (t != by_id.end() && l != labels.end()) out.push_back({id, t->second->patient_text, l->second});
  }
  if (!missing_label.empty())
    throw InputError(fmt::format("no reference label for ids: {}", fmt::join(missing_label, ", ")));
  if (!missing_text.empty())
    throw InputError(fmt::format("ids absent from corpus: {}", fmt::join(missing_text, ", ")));
  return out;
}

std::string id_digest(const std::vector<RecordId>& ids) {
  std::string s;
  for (auto id : ids) s += fmt::format("{}\n", id);
  return sha256_hex(s);
}

}  // namespace triage
