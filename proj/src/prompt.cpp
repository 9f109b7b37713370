#include "triage/prompt.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include <fmt/format.h>

#include "triage/io.hpp"

namespace triage {

namespace {

constexpr std::string_view kBasePrompt =
    R"(### Role: You are a clinical workflow triage classifier for online patient inquiries.
### Task: Classify the patient message into exactly one triage label. This is for workflow routing, not diagnosis or treatment recommendation.
Allowed labels:
1. self-care
2. schedule-visit
3. urgent-clinician-review
4. emergency-referral

### Definitions::
[self-care]
Use for general health questions, mild short-duration symptoms, stable known conditions, medication/lifestyle questions, retrospective checks, or informational questions that do not require prompt clinician evaluation.
[schedule-visit]
Use when the message suggests the patient should have a non-urgent clinician visit or routine evaluation within days to weeks. This includes persistent but stable symptoms, mild new findings, medication adjustment questions, specialist referral needs, or unresolved recurring issues without urgent red flags.
[urgent-clinician-review]
Use when the message suggests clinician review is needed within 24–48 hours. This includes worsening symptoms, moderate or severe pain, fever lasting more than 48 hours, signs of infection, non-sudden neurological symptoms, concerning symptoms in infants/elderly/immunocompromised patients, or passive suicidal ideation without stated plan or intent.
[emergency-referral]
Use when the message suggests immediate emergency risk. This includes severe or crushing chest pain, chest pain with radiation, severe shortness of breath, loss of consciousness, stroke-like symptoms, seizure, severe bleeding, severe allergic reaction, sepsis-like deterioration, infant under 3 months with fever, or suicidal ideation with plan or intent.

### Decision rules:
- Assign the label based on the most severe signal in the message.
- Do not diagnose. Classify only the urgency of response.
- If the message is informational or retrospective and no one has active unmanaged symptoms, use self-care unless the patient asks for next-step action.
- If symptoms are active, worsening, persistent, or functionally impairing, do not use self-care.
- If a special population is involved, such as an infant, elderly patient, pregnancy, or immunocompromised patient, use a lower threshold for escalation.
- If uncertain between two adjacent severity levels, choose the higher-risk label.
- If the message is too vague but contains some clinical signal, still assign the safest reasonable triage label and set insufficient_info to true.
- If the message has no usable clinical content, assign schedule-visit and set insufficient_info to true.

### Output format:
Return valid JSON only. Do not include markdown, explanations, or extra text.
Schema:
{
  "label": "self-care | schedule-visit | urgent-clinician-review | emergency-referral",
  "confidence": "high | medium | low",
  "insufficient_info": true | false
}
Patient message:
{patient_message}
)";

constexpr std::string_view kQueryHeader = "Patient message:";

std::string replace_all(std::string text, std::string_view from, std::string_view to) {
  for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size()))
    text.replace(pos, from.size(), to);
  return text;
}

}  // namespace

PromptSetting PromptSetting::from_shots(int shots) {
  if (shots != 0 && shots != 4 && shots != 12)
    throw std::invalid_argument(fmt::format("unsupported shot count {} (expected 0, 4 or 12)", shots));
  return PromptSetting{shots};
}

std::string PromptSetting::name() const {
  return fmt::format("{}-shot", shots);
}

std::vector<Demonstration> select_demonstrations(const std::vector<LabeledRecord>& fewshot_pool,
                                                 int k_per_class,
                                                 const std::vector<RecordId>& preferred_ids) {
  if (k_per_class < 0) throw std::invalid_argument("k_per_class must be non-negative");
  std::array<std::vector<const LabeledRecord*>, kNumLabels> by_class;
  for (const auto& r : fewshot_pool) by_class[index_of(r.label)].push_back(&r);

  for (auto id : preferred_ids) {
    bool found = std::any_of(fewshot_pool.begin(), fewshot_pool.end(),
                             [&](const LabeledRecord& r) { return r.id == id; });
    if (!found) throw std::invalid_argument(fmt::format("demonstration id {} is not in the few-shot pool", id));
  }

  std::array<std::vector<const LabeledRecord*>, kNumLabels> chosen;
  for (auto label : kAllLabels) {
    auto& pool = by_class[index_of(label)];
    if (pool.size() < static_cast<std::size_t>(k_per_class))
      throw std::invalid_argument(fmt::format("few-shot pool has {} '{}' examples, need {}", pool.size(),
                                              to_string(label), k_per_class));
    auto rank_of = [&](const LabeledRecord* r) {
      auto it = std::find(preferred_ids.begin(), preferred_ids.end(), r->id);
      return it == preferred_ids.end() ? preferred_ids.size() : static_cast<std::size_t>(it - preferred_ids.begin());
    };
    std::sort(pool.begin(), pool.end(), [&](const LabeledRecord* a, const LabeledRecord* b) {
      auto ra = rank_of(a), rb = rank_of(b);
      if (ra != rb) return ra < rb;
      return a->id < b->id;
    });
    chosen[index_of(label)].assign(pool.begin(), pool.begin() + k_per_class);
  }

  std::vector<Demonstration> out;
  auto emit = [&](TriageLabel label, int rank) {
    const auto* r = chosen[index_of(label)][static_cast<std::size_t>(rank - 1)];
    out.push_back({r->id, r->text, r->label, rank});
  };
  if (k_per_class == 0) return out;
  for (auto label : kAllLabels) emit(label, 1);
  for (auto label : kAllLabels)
    for (int rank = 2; rank <= k_per_class; ++rank) emit(label, rank);
  return out;
}

std::string_view default_base_prompt() noexcept {
  return kBasePrompt;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  PromptTemplate t;
  t.text = read_file(path);
  if (t.text.find(kPatientPlaceholder) == std::string::npos)
    throw InputError(fmt::format("{}: template lacks the {} placeholder", path.string(), kPatientPlaceholder));
  return t;
}

std::string render_demonstration_block(const std::vector<Demonstration>& demos) {
  std::string block;
  for (const auto& d : demos) {
    block += fmt::format("{}\n\"{}\"\nOutput:\n{{\"label\":\"{}\"}}\n\n", kQueryHeader, d.patient_text,
                         to_string(d.label));
  }
  return block;
}

RenderedPrompt render_prompt(PromptSetting setting, const std::vector<Demonstration>& demos,
                             std::string_view message, const PromptTemplate& tmpl) {
  if (demos.size() != static_cast<std::size_t>(setting.shots))
    throw std::invalid_argument(fmt::format("{} expects {} demonstrations, got {}", setting.name(),
                                            setting.shots, demos.size()));
  const std::string& text = tmpl.text;
  auto slot = text.find(kPatientPlaceholder);
  if (slot == std::string::npos) throw std::invalid_argument("prompt template lacks the patient placeholder");
  auto header = text.rfind(kQueryHeader, slot);
  std::size_t split = header == std::string::npos ? slot : header;

  std::string instructions = text.substr(0, split);
  std::string query = replace_all(text.substr(split), kPatientPlaceholder, message);
  std::string block = render_demonstration_block(demos);

  RenderedPrompt p;
  if (tmpl.demonstrations_in_system) {
    p.system_text = instructions + block;
    p.user_text = query;
  } else {
    p.system_text = instructions;
    p.user_text = block + query;
  }
  std::array<std::string, 2> parts = {p.system_text, p.user_text};
  p.content_hash = sha256_hex_parts(parts);
  return p;
}

}  // namespace triage
