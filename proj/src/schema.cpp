#include "triage/schema.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace triage {

namespace {

constexpr std::array<std::string_view, kNumLabels> kCanonical = {
    "self-care", "schedule-visit", "urgent-clinician-review", "emergency-referral"};

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// Content of the first ``` fence, minus its info string. Unterminated fences
// run to end of text.
std::string_view strip_code_fence(std::string_view text) {
  auto open = text.find("```");
  if (open == std::string_view::npos) return text;
  auto body_start = text.find('\n', open + 3);
  if (body_start == std::string_view::npos) {
    // Single-line fence such as ```{"label": "x"}```.
    body_start = open + 3;
    while (body_start < text.size() && std::isalpha(static_cast<unsigned char>(text[body_start])))
      ++body_start;
  } else {
    ++body_start;
  }
  auto close = text.find("```", body_start);
  if (close == std::string_view::npos) return text.substr(body_start);
  return text.substr(body_start, close - body_start);
}

// Spans of balanced top-level {...} literals, string-literal aware.
std::vector<std::string_view> balanced_objects(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      ++i;
      continue;
    }
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t j = i;
    bool closed = false;
    for (; j < text.size(); ++j) {
      char c = text[j];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          closed = true;
          break;
        }
      }
    }
    if (!closed) break;
    out.push_back(text.substr(i, j - i + 1));
    i = j + 1;
  }
  return out;
}

struct LabelResolution {
  std::optional<TriageLabel> label;
  std::optional<ParseFailureReason> failure;
  bool lenient = false;
};

// Splits an echoed alternative list such as "self-care | schedule-visit".
std::vector<std::string> split_alternatives(const std::string& s) {
  std::vector<std::string> parts;
  std::string current;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '|' || s[i] == '/' || s[i] == ',') {
      parts.push_back(current);
      current.clear();
    } else if (s.compare(i, 4, " or ") == 0) {
      parts.push_back(current);
      current.clear();
      i += 3;
    } else {
      current.push_back(s[i]);
    }
  }
  parts.push_back(current);
  return parts;
}

LabelResolution resolve_label_strings(const std::vector<std::string>& values) {
  LabelResolution res;
  std::vector<TriageLabel> found;
  bool any_unmappable = false;
  for (const auto& v : values) {
    auto direct = normalize_label(v);
    if (auto* l = std::get_if<TriageLabel>(&direct)) {
      found.push_back(*l);
      continue;
    }
    auto parts = split_alternatives(lower(v));
    if (parts.size() < 2) {
      any_unmappable = true;
      continue;
    }
    for (const auto& p : parts) {
      auto alt = normalize_label(p);
      if (auto* l = std::get_if<TriageLabel>(&alt)) {
        found.push_back(*l);
      } else {
        any_unmappable = true;
      }
    }
  }
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());
  if (found.size() > 1) {
    res.failure = ParseFailureReason::MultipleConflictingLabels;
  } else if (found.size() == 1 && !any_unmappable) {
    res.label = found.front();
    res.lenient = values.size() > 1;
  } else {
    res.failure = ParseFailureReason::UnmappableLabel;
  }
  return res;
}

}  // namespace

Severity severity_of(TriageLabel label) noexcept {
  return Severity{static_cast<int>(label)};
}

TriageLabel label_of(Severity severity) {
  if (severity.level < 0 || severity.level > 3)
    throw std::out_of_range("severity level outside 0..3");
  return static_cast<TriageLabel>(severity.level);
}

std::string_view to_string(TriageLabel label) noexcept {
  return kCanonical[index_of(label)];
}

std::optional<TriageLabel> label_from_canonical(std::string_view text) noexcept {
  for (std::size_t i = 0; i < kCanonical.size(); ++i)
    if (kCanonical[i] == text) return static_cast<TriageLabel>(i);
  return std::nullopt;
}

std::string_view to_string(Confidence c) noexcept {
  switch (c) {
    case Confidence::High: return "high";
    case Confidence::Medium: return "medium";
    case Confidence::Low: return "low";
    case Confidence::Unknown: break;
  }
  return "unknown";
}

std::optional<Confidence> confidence_from_string(std::string_view text) noexcept {
  if (text == "high") return Confidence::High;
  if (text == "medium") return Confidence::Medium;
  if (text == "low") return Confidence::Low;
  if (text == "unknown") return Confidence::Unknown;
  return std::nullopt;
}

std::string_view to_string(ParseFailureReason reason) noexcept {
  switch (reason) {
    case ParseFailureReason::NoObjectFound: return "no-object-found";
    case ParseFailureReason::UnmappableLabel: return "unmappable-label";
    case ParseFailureReason::MissingLabelField: return "missing-label-field";
    case ParseFailureReason::MultipleConflictingLabels: return "multiple-conflicting-labels";
  }
  return "no-object-found";
}

std::optional<ParseFailureReason> parse_failure_reason_from_string(std::string_view text) noexcept {
  for (auto r : {ParseFailureReason::NoObjectFound, ParseFailureReason::UnmappableLabel,
                 ParseFailureReason::MissingLabelField,
                 ParseFailureReason::MultipleConflictingLabels}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

std::optional<TriageLabel> label_if_valid(const ParseOutcome& outcome) noexcept {
  if (const auto* p = std::get_if<StructuredPrediction>(&outcome)) return p->label;
  return std::nullopt;
}

std::variant<TriageLabel, ParseFailure> normalize_label(std::string_view raw) {
  std::string folded = lower(trim(raw));
  auto is_strippable = [](char c) {
    return is_space(c) || std::ispunct(static_cast<unsigned char>(c)) != 0;
  };
  std::size_t b = 0;
  std::size_t e = folded.size();
  while (b < e && is_strippable(folded[b])) ++b;
  while (e > b && is_strippable(folded[e - 1])) --e;

  std::string canon;
  canon.reserve(e - b);
  bool in_sep = false;
  for (std::size_t i = b; i < e; ++i) {
    char c = folded[i];
    if (is_space(c) || c == '_' || c == '-') {
      if (!in_sep) canon.push_back('-');
      in_sep = true;
    } else {
      canon.push_back(c);
      in_sep = false;
    }
  }
  if (auto label = label_from_canonical(canon)) return *label;
  return ParseFailure{std::string(raw), ParseFailureReason::UnmappableLabel, {}};
}

ParseOutcome parse_structured_output(std::string_view raw) noexcept {
  try {
    std::string raw_copy(raw);
    auto fail = [&](ParseFailureReason r) { return ParseFailure{raw_copy, r, {}}; };

    std::string_view body = strip_code_fence(raw);
    auto objects = balanced_objects(body);

    if (objects.empty()) {
      auto bare = normalize_label(trim(body));
      if (auto* l = std::get_if<TriageLabel>(&bare)) {
        return StructuredPrediction{*l, Confidence::Unknown, false, raw_copy, true};
      }
      return fail(ParseFailureReason::NoObjectFound);
    }

    for (auto literal : objects) {
      // Collect every top-level "label" string so duplicate keys are noticed;
      // the DOM alone keeps only the last one.
      std::vector<std::string> label_values;
      bool next_is_label = false;
      nlohmann::json::parser_callback_t cb = [&](int depth, nlohmann::json::parse_event_t ev,
                                                 nlohmann::json& parsed) {
        using E = nlohmann::json::parse_event_t;
        if (depth == 1 && ev == E::key) {
          next_is_label = parsed.is_string() && parsed.get<std::string>() == "label";
        } else if (depth == 1 && ev == E::value && next_is_label) {
          if (parsed.is_string()) label_values.push_back(parsed.get<std::string>());
          next_is_label = false;
        }
        return true;
      };
      nlohmann::json obj = nlohmann::json::parse(literal, cb, /*allow_exceptions=*/false);
      if (obj.is_discarded() || !obj.is_object()) continue;

      bool lenient = false;
      const nlohmann::json* label_field = nullptr;
      if (auto it = obj.find("label"); it != obj.end()) {
        label_field = &*it;
      } else {
        for (auto it2 = obj.begin(); it2 != obj.end(); ++it2) {
          if (lower(it2.key()) == "label") {
            label_field = &it2.value();
            lenient = true;
            break;
          }
        }
      }
      if (label_field == nullptr || label_field->is_null())
        return fail(ParseFailureReason::MissingLabelField);

      std::vector<std::string> values;
      if (label_field->is_string()) {
        values = label_values.empty() ? std::vector<std::string>{label_field->get<std::string>()}
                                      : label_values;
      } else if (label_field->is_array()) {
        for (const auto& v : *label_field) {
          if (!v.is_string()) return fail(ParseFailureReason::UnmappableLabel);
          values.push_back(v.get<std::string>());
        }
        if (values.empty()) return fail(ParseFailureReason::MissingLabelField);
        lenient = true;
      } else {
        return fail(ParseFailureReason::UnmappableLabel);
      }

      auto res = resolve_label_strings(values);
      if (res.failure) return fail(*res.failure);
      lenient = lenient || res.lenient;

      StructuredPrediction pred;
      pred.label = *res.label;
      pred.raw_text = raw_copy;

      if (auto c = obj.find("confidence"); c != obj.end() && c->is_string()) {
        auto conf = confidence_from_string(lower(trim(c->get<std::string>())));
        if (conf && *conf != Confidence::Unknown) {
          pred.confidence = *conf;
        } else {
          lenient = true;
        }
      } else {
        lenient = true;
      }

      if (auto f = obj.find("insufficient_info"); f != obj.end() && f->is_boolean()) {
        pred.insufficient_info = f->get<bool>();
      } else if (f != obj.end() && f->is_string() && lower(trim(f->get<std::string>())) == "true") {
        pred.insufficient_info = true;
        lenient = true;
      } else {
        lenient = true;
      }

      pred.leniently_parsed = lenient;
      return pred;
    }
    return fail(ParseFailureReason::NoObjectFound);
  } catch (...) {
    return ParseFailure{std::string(raw), ParseFailureReason::NoObjectFound, "internal parser error"};
  }
}

}  // namespace triage
