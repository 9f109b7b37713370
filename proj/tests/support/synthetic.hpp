#pragma once

// Synthetic patient-message corpus with class-correlated wording.

#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "triage/corpus.hpp"
#include "triage/dataset.hpp"
#include "triage/rng.hpp"

namespace testsupport {

struct SyntheticCorpus {
  std::vector<triage::InquiryRecord> records;
  triage::LabelMap labels;
};

inline const std::vector<std::vector<std::string>>& synthetic_openers() {
  // Indexed by severity level.
  static const std::vector<std::vector<std::string>> openers = {
      {"I have a mild common cold with a runny nose and a scratchy throat.",
       "Is it normal to feel a minor ache in my knee after jogging on weekends?",
       "Can I take a vitamin tablet every morning along with my usual breakfast?",
       "What home remedy helps a slight cold that started this morning?"},
      {"I have been having persistent headaches for weeks and would like a specialist referral.",
       "My chronic back ache has continued on and off and I need a follow-up appointment.",
       "I would like a second opinion about my lab results from the clinic.",
       "My prescription for blood pressure tablets is running out and I need a check-up."},
      {"I have a high fever and the cut on my leg looks infected with swelling around it.",
       "My toothache is getting worse and the gum is swollen and tender.",
       "There is an abscess on my arm that is not healing and it keeps coming back.",
       "My sore throat is worsening and I am unable to eat anything solid."},
      {"My father has crushing chest pain right now and is sweating heavily.",
       "My son is having a seizure right now and is not responding to us.",
       "My wife just collapsed in the kitchen and she can't breathe properly.",
       "My friend took too many pills tonight and is now unresponsive on the floor."},
  };
  return openers;
}

inline const std::vector<std::string>& synthetic_fillers() {
  static const std::vector<std::string> fillers = {
      "I am thirty four years old and otherwise healthy.",
      "Please tell me what I should do next.",
      "I live in a small town far from the city.",
      "Thank you doctor for reading my message.",
      "I do not smoke and I rarely drink alcohol.",
      "My family is worried about this situation.",
      "I would appreciate any advice you can give me.",
      "I work long hours at an office desk every day.",
  };
  return fillers;
}

/// `n` records with ids 1000.. and labels following the opener class, except
/// that 1 in `noise_every` labels is moved one level (0 disables).
inline SyntheticCorpus make_synthetic_corpus(std::size_t n, std::uint64_t seed, unsigned noise_every = 7) {
  triage::DeterministicRng rng(seed);
  const auto& openers = synthetic_openers();
  const auto& fillers = synthetic_fillers();
  SyntheticCorpus c;
  for (std::size_t i = 0; i < n; ++i) {
    triage::InquiryRecord r;
    r.id = static_cast<triage::RecordId>(1000 + i);
    r.source_row = i;
    const int level = static_cast<int>(i % 4);
    std::string text = openers[level][rng.below(openers[level].size())];
    const auto n_fill = 3 + rng.below(3);
    for (std::size_t f = 0; f < n_fill; ++f) text += " " + fillers[rng.below(fillers.size())];
    r.patient_text = text;
    r.physician_text = level == 3 ? "Please go to the nearest emergency room now." : "Thanks for your question.";
    int labeled = level;
    if (noise_every != 0 && rng.below(noise_every) == 0) labeled = level == 3 ? 2 : level + 1;
    c.labels.emplace(r.id, triage::label_of(triage::Severity{labeled}));
    c.records.push_back(std::move(r));
  }
  return c;
}

inline std::string to_jsonl(const std::vector<triage::InquiryRecord>& records) {
  std::string out;
  for (const auto& r : records)
    out += nlohmann::json{{"id", r.id}, {"patient", r.patient_text}, {"physician", r.physician_text}}.dump() + "\n";
  return out;
}

inline std::string labels_csv(const triage::LabelMap& labels) {
  std::string out = "id,label\n";
  for (const auto& [id, label] : labels) out += fmt::format("{},{}\n", id, triage::to_string(label));
  return out;
}

/// A message with exactly `tokens` whitespace tokens.
inline std::string message_with_tokens(std::size_t tokens, std::string_view word = "word") {
  std::string s;
  for (std::size_t i = 0; i < tokens; ++i) {
    if (i) s += ' ';
    s += word;
  }
  return s;
}

}  // namespace testsupport
