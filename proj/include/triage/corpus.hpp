#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace triage {

using RecordId = std::int64_t;

/// One patient inquiry with its physician reply.
struct InquiryRecord {
  RecordId id = 0;
  std::string patient_text;    // byte-exact from input
  std::string physician_text;  // used only for sampling enrichment
  std::size_t source_row = 0;  // 0-based data row in the input file

  bool operator==(const InquiryRecord&) const = default;
};

enum class CorpusFormat { JsonLines, Csv };

CorpusFormat corpus_format_from_string(std::string_view name);

/// Input field names. When `id` is absent from a row or from the CSV header,
/// ids are assigned from the 0-based row index.
struct CorpusColumns {
  std::string id = "id";
  std::string patient = "patient";
  std::string physician = "physician";
};

std::vector<InquiryRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                       const CorpusColumns& columns = {});

std::vector<InquiryRecord> parse_corpus(std::string_view contents, CorpusFormat format,
                                        const CorpusColumns& columns = {});

struct FilterConfig {
  int min_tokens = 20;
  int max_tokens = 500;
  int min_chars = 10;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

enum class ExclusionReason { TooShortTokens, TooLongTokens, TooFewChars };

std::string_view to_string(ExclusionReason reason) noexcept;

struct Exclusion {
  RecordId id = 0;
  ExclusionReason reason = ExclusionReason::TooShortTokens;
  bool operator==(const Exclusion&) const = default;
};

struct FilterOutcome {
  std::vector<InquiryRecord> kept;
  std::vector<Exclusion> excluded;
};

/// Whitespace-delimited runs of non-whitespace.
std::size_t count_tokens(std::string_view text) noexcept;

/// Unicode scalar values in UTF-8 text (non-continuation bytes).
std::size_t count_scalars(std::string_view text) noexcept;

FilterOutcome quality_filter(const std::vector<InquiryRecord>& records, const FilterConfig& cfg);

nlohmann::json filter_report(const FilterOutcome& outcome, const FilterConfig& cfg);

}  // namespace triage
