#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace triage {

/// The four actionable triage levels, declared in ascending severity.
enum class TriageLabel : std::uint8_t {
  SelfCare = 0,
  ScheduleVisit = 1,
  UrgentClinicianReview = 2,
  EmergencyReferral = 3,
};

inline constexpr std::size_t kNumLabels = 4;

inline constexpr std::array<TriageLabel, kNumLabels> kAllLabels = {
    TriageLabel::SelfCare, TriageLabel::ScheduleVisit,
    TriageLabel::UrgentClinicianReview, TriageLabel::EmergencyReferral};

/// Ordinal severity 0..3.
struct Severity {
  int level = 0;
  auto operator<=>(const Severity&) const = default;
};

Severity severity_of(TriageLabel label) noexcept;
TriageLabel label_of(Severity severity);

inline std::size_t index_of(TriageLabel label) noexcept {
  return static_cast<std::size_t>(label);
}

/// Canonical wire spelling ("self-care", ...).
std::string_view to_string(TriageLabel label) noexcept;

/// Exact match against the canonical spellings only.
std::optional<TriageLabel> label_from_canonical(std::string_view text) noexcept;

enum class Confidence : std::uint8_t { High, Medium, Low, Unknown };

std::string_view to_string(Confidence c) noexcept;
std::optional<Confidence> confidence_from_string(std::string_view text) noexcept;

struct StructuredPrediction {
  TriageLabel label = TriageLabel::SelfCare;
  Confidence confidence = Confidence::Unknown;
  bool insufficient_info = false;
  std::string raw_text;
  bool leniently_parsed = false;

  bool operator==(const StructuredPrediction&) const = default;
};

enum class ParseFailureReason : std::uint8_t {
  NoObjectFound,
  UnmappableLabel,
  MissingLabelField,
  MultipleConflictingLabels,
};

std::string_view to_string(ParseFailureReason reason) noexcept;
std::optional<ParseFailureReason> parse_failure_reason_from_string(std::string_view text) noexcept;

struct ParseFailure {
  std::string raw_text;
  ParseFailureReason reason = ParseFailureReason::NoObjectFound;
  // Free-form context, e.g. a transport error that replaced the model output.
  std::string note;

  bool operator==(const ParseFailure&) const = default;
};

using ParseOutcome = std::variant<StructuredPrediction, ParseFailure>;

inline bool is_valid(const ParseOutcome& outcome) noexcept {
  return std::holds_alternative<StructuredPrediction>(outcome);
}

/// Label of a valid outcome, nullopt for a failure.
std::optional<TriageLabel> label_if_valid(const ParseOutcome& outcome) noexcept;

/// Folds case, surrounding punctuation and separators, then requires an exact
/// canonical match. No fuzzy or semantic mapping is attempted.
std::variant<TriageLabel, ParseFailure> normalize_label(std::string_view raw);

/// Turns raw model output into a prediction. Never throws.
///
/// Steps: strip a markdown code fence if present, parse the first balanced
/// top-level object literal that is valid JSON, read and normalize its
/// "label". Optional "confidence" and "insufficient_info" fall back to
/// Unknown/false and mark the prediction as leniently parsed. When the text
/// holds no object literal at all, the whole trimmed text is tried as a bare
/// label.
ParseOutcome parse_structured_output(std::string_view raw) noexcept;

}  // namespace triage
