#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "triage/dataset.hpp"

namespace triage {

/// Number of in-context demonstrations: 0, 4 (one per class) or 12 (three per class).
struct PromptSetting {
  int shots = 0;

  static PromptSetting from_shots(int shots);
  int per_class() const noexcept { return shots / static_cast<int>(kNumLabels); }
  std::string name() const;  // "0-shot", ...
  bool operator==(const PromptSetting&) const = default;
};

struct Demonstration {
  RecordId id = 0;
  std::string patient_text;
  TriageLabel label = TriageLabel::SelfCare;
  int rank = 1;  // 1..3 within its class
};

/// Picks `k_per_class` demonstrations per class from the few-shot pool.
///
/// Within a class, `preferred_ids` (in the given order) are taken first, then
/// the lowest remaining ids. The result lists the rank-1 demonstration of
/// every class first, in severity order, followed by the higher ranks grouped
/// by class, so a 12-shot prompt extends the 4-shot prompt.
std::vector<Demonstration> select_demonstrations(const std::vector<LabeledRecord>& fewshot_pool,
                                                 int k_per_class,
                                                 const std::vector<RecordId>& preferred_ids = {});

/// The shared triage instruction template with its `{patient_message}` slot.
std::string_view default_base_prompt() noexcept;

inline constexpr std::string_view kPatientPlaceholder = "{patient_message}";

struct PromptTemplate {
  std::string text = std::string(default_base_prompt());
  // Put demonstrations at the end of the system text instead of the user text.
  bool demonstrations_in_system = false;

  static PromptTemplate load(const std::filesystem::path& path);
};

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;
  std::string content_hash;  // sha256 over (system_text, user_text)

  /// The prompt as a single string, for single-turn endpoints and audits.
  std::string full_text() const { return system_text + user_text; }
};

/// Splits the template at the "Patient message:" header that introduces the
/// placeholder: the instructions become the system text; demonstrations and
/// the substituted query become the user text. For 0-shot the concatenation
/// equals the template with the placeholder substituted.
RenderedPrompt render_prompt(PromptSetting setting, const std::vector<Demonstration>& demos,
                             std::string_view message, const PromptTemplate& tmpl = {});

std::string render_demonstration_block(const std::vector<Demonstration>& demos);

}  // namespace triage
