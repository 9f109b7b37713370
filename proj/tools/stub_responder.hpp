#pragma once

// Deterministic stand-in for a chat model, used by the offline stub server
// and by tests. The reply depends only on the patient message.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>

#include <fmt/format.h>

namespace triage::stub {

/// Text after the last "Patient message:" header, trimmed.
inline std::string query_of(std::string_view prompt) {
  constexpr std::string_view header = "Patient message:";
  auto pos = prompt.rfind(header);
  std::string_view q = pos == std::string_view::npos ? prompt : prompt.substr(pos + header.size());
  while (!q.empty() && std::isspace(static_cast<unsigned char>(q.front()))) q.remove_prefix(1);
  while (!q.empty() && std::isspace(static_cast<unsigned char>(q.back()))) q.remove_suffix(1);
  return std::string(q);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Keyword rules over the lowercased query; `bias` shifts the choice for a
/// fraction of messages so that two stub models disagree on some cases.
inline std::string_view stub_label(std::string_view query, unsigned bias = 0) {
  std::string low(query);
  std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
  auto has = [&](std::string_view w) { return low.find(w) != std::string::npos; };
  static constexpr std::array<std::string_view, 4> labels = {"self-care", "schedule-visit", "urgent-clinician-review",
                                                              "emergency-referral"};
  std::size_t level = 1;
  if (has("chest pain") || has("can't breathe") || has("unconscious") || has("seizure")) level = 3;
  else if (has("fever") || has("infection") || has("worsening") || has("blood")) level = 2;
  else if (has("mild") || has("cold") || has("dandruff") || has("home remedy")) level = 0;
  if (bias != 0 && fnv1a(low) % bias == 0) level = (level + 1) % 4;
  return labels[level];
}

/// Model output for a prompt. Every `garbage_every`-th message (by hash)
/// yields prose without a label.
inline std::string stub_reply(std::string_view prompt, unsigned bias = 0, unsigned garbage_every = 0) {
  auto q = query_of(prompt);
  if (garbage_every != 0 && (fnv1a(q) >> 8) % garbage_every == 0)
    return "I am not able to assess this message without more details.";
  return fmt::format(R"({{"label": "{}", "confidence": "medium", "insufficient_info": false}})", stub_label(q, bias));
}

}  // namespace triage::stub
