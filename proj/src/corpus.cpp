#include "triage/corpus.hpp"

#include <cctype>
#include <charconv>
#include <optional>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "triage/io.hpp"

namespace triage {

namespace {

std::optional<RecordId> parse_id_text(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  RecordId v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

std::optional<RecordId> id_from_json(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<RecordId>();
  if (v.is_string()) return parse_id_text(v.get<std::string>());
  return std::nullopt;
}

void check_unique(std::unordered_set<RecordId>& seen, RecordId id, std::size_t line) {
  if (!seen.insert(id).second)
    throw InputError(fmt::format("duplicate id {} at row {}", id, line));
}

std::vector<InquiryRecord> parse_jsonl(std::string_view contents, const CorpusColumns& cols) {
  std::vector<InquiryRecord> out;
  std::unordered_set<RecordId> seen;
  for (const auto& [line, text] : read_nonempty_lines(contents)) {
    auto obj = nlohmann::json::parse(text, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      throw InputError(fmt::format("row {}: not a JSON object", line));
    InquiryRecord rec;
    rec.source_row = out.size();
    if (auto it = obj.find(cols.id); it != obj.end() && !it->is_null()) {
      auto id = id_from_json(*it);
      if (!id) throw InputError(fmt::format("row {}: id is not an integer", line));
      rec.id = *id;
    } else {
      rec.id = static_cast<RecordId>(rec.source_row);
    }
    auto p = obj.find(cols.patient);
    if (p == obj.end() || !p->is_string())
      throw InputError(fmt::format("row {}: missing string field '{}'", line, cols.patient));
    rec.patient_text = p->get<std::string>();
    if (auto d = obj.find(cols.physician); d != obj.end() && !d->is_null()) {
      if (!d->is_string())
        throw InputError(fmt::format("row {}: field '{}' is not a string", line, cols.physician));
      rec.physician_text = d->get<std::string>();
    }
    check_unique(seen, rec.id, line);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<InquiryRecord> parse_csv_corpus(std::string_view contents, const CorpusColumns& cols) {
  auto rows = parse_csv(contents);
  if (rows.empty()) throw InputError("csv corpus has no header row");
  const auto& header = rows.front().fields;
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  };
  auto id_col = column(cols.id);
  auto patient_col = column(cols.patient);
  auto physician_col = column(cols.physician);
  if (!patient_col) throw InputError(fmt::format("csv header lacks required column '{}'", cols.patient));

  std::vector<InquiryRecord> out;
  std::unordered_set<RecordId> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.size())
      throw InputError(fmt::format("row {}: expected {} fields, found {}", row.line, header.size(),
                                   row.fields.size()));
    InquiryRecord rec;
    rec.source_row = out.size();
    if (id_col) {
      auto id = parse_id_text(row.fields[*id_col]);
      if (!id) throw InputError(fmt::format("row {}: id is not an integer", row.line));
      rec.id = *id;
    } else {
      rec.id = static_cast<RecordId>(rec.source_row);
    }
    rec.patient_text = row.fields[*patient_col];
    if (physician_col) rec.physician_text = row.fields[*physician_col];
    check_unique(seen, rec.id, row.line);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

CorpusFormat corpus_format_from_string(std::string_view name) {
  if (name == "json-lines" || name == "jsonl") return CorpusFormat::JsonLines;
  if (name == "csv") return CorpusFormat::Csv;
  throw std::invalid_argument(fmt::format("unknown corpus format '{}'", name));
}

std::vector<InquiryRecord> parse_corpus(std::string_view contents, CorpusFormat format,
                                        const CorpusColumns& columns) {
  return format == CorpusFormat::JsonLines ? parse_jsonl(contents, columns)
                                           : parse_csv_corpus(contents, columns);
}

std::vector<InquiryRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                       const CorpusColumns& columns) {
  try {
    return parse_corpus(read_file(path), format, columns);
  } catch (const InputError& e) {
    throw InputError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void FilterConfig::validate() const {
  if (min_tokens < 1) throw std::invalid_argument("min_tokens must be >= 1");
  if (max_tokens <= min_tokens) throw std::invalid_argument("max_tokens must exceed min_tokens");
  if (min_chars < 1) throw std::invalid_argument("min_chars must be >= 1");
}

std::string_view to_string(ExclusionReason reason) noexcept {
  switch (reason) {
    case ExclusionReason::TooShortTokens: return "too-short-tokens";
    case ExclusionReason::TooLongTokens: return "too-long-tokens";
    case ExclusionReason::TooFewChars: return "too-few-chars";
  }
  return "too-short-tokens";
}

std::size_t count_tokens(std::string_view text) noexcept {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : text) {
    bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!ws && !in_token) ++n;
    in_token = !ws;
  }
  return n;
}

std::size_t count_scalars(std::string_view text) noexcept {
  std::size_t n = 0;
  for (unsigned char c : text)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

FilterOutcome quality_filter(const std::vector<InquiryRecord>& records, const FilterConfig& cfg) {
  FilterOutcome out;
  for (const auto& rec : records) {
    auto tokens = count_tokens(rec.patient_text);
    std::optional<ExclusionReason> reason;
    if (tokens < static_cast<std::size_t>(cfg.min_tokens)) {
      reason = ExclusionReason::TooShortTokens;
    } else if (tokens > static_cast<std::size_t>(cfg.max_tokens)) {
      reason = ExclusionReason::TooLongTokens;
    } else if (count_scalars(rec.patient_text) < static_cast<std::size_t>(cfg.min_chars)) {
      reason = ExclusionReason::TooFewChars;
    }
    if (reason) {
      out.excluded.push_back({rec.id, *reason});
    } else {
      out.kept.push_back(rec);
    }
  }
  return out;
}

nlohmann::json filter_report(const FilterOutcome& outcome, const FilterConfig& cfg) {
  nlohmann::json excluded = nlohmann::json::array();
  std::size_t short_n = 0, long_n = 0, chars_n = 0;
  for (const auto& e : outcome.excluded) {
    excluded.push_back({{"id", e.id}, {"reason", to_string(e.reason)}});
    switch (e.reason) {
      case ExclusionReason::TooShortTokens: ++short_n; break;
      case ExclusionReason::TooLongTokens: ++long_n; break;
      case ExclusionReason::TooFewChars: ++chars_n; break;
    }
  }
  return {
      {"config", {{"min_tokens", cfg.min_tokens}, {"max_tokens", cfg.max_tokens}, {"min_chars", cfg.min_chars}}},
      {"input", outcome.kept.size() + outcome.excluded.size()},
      {"kept", outcome.kept.size()},
      {"excluded_total", outcome.excluded.size()},
      {"excluded_by_reason",
       {{"too-short-tokens", short_n}, {"too-long-tokens", long_n}, {"too-few-chars", chars_n}}},
      {"excluded", std::move(excluded)},
  };
}

}  // namespace triage
