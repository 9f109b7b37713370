#include "triage/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "triage/io.hpp"

namespace triage {

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

std::vector<std::string> matches(const std::string& lowered, const std::vector<std::string>& phrases) {
  std::vector<std::string> out;
  for (const auto& p : phrases)
    if (contains(lowered, p)) out.push_back(p);
  return out;
}

bool any_match(const std::string& lowered, const std::vector<std::string>& phrases) {
  return std::any_of(phrases.begin(), phrases.end(),
                     [&](const std::string& p) { return contains(lowered, p); });
}

using Span = std::pair<std::size_t, std::size_t>;

std::vector<Span> occurrences(const std::string& text, const std::string& phrase) {
  std::vector<Span> out;
  for (auto pos = text.find(phrase); pos != std::string::npos; pos = text.find(phrase, pos + 1))
    out.emplace_back(pos, pos + phrase.size());
  return out;
}

std::vector<std::string>* section_for(KeywordLists& kw, std::string_view name) {
  static const std::map<std::string_view, std::vector<std::string> KeywordLists::*> kSections = {
      {"strong_emergency", &KeywordLists::strong_emergency},
      {"moderate_emergency", &KeywordLists::moderate_emergency},
      {"past_tense", &KeywordLists::past_tense},
      {"doctor_escalation", &KeywordLists::doctor_escalation},
      {"selfcare", &KeywordLists::selfcare},
      {"selfcare_excluders", &KeywordLists::selfcare_excluders},
      {"urgent", &KeywordLists::urgent},
      {"schedule", &KeywordLists::schedule},
  };
  auto it = kSections.find(name);
  return it == kSections.end() ? nullptr : &(kw.*(it->second));
}

}  // namespace

KeywordLists KeywordLists::defaults() {
  KeywordLists kw;
  kw.strong_emergency = {
      "can't breathe", "cannot breathe", "can not breathe", "struggling to breathe",
      "gasping for air", "not breathing", "stopped breathing", "just collapsed",
      "just passed out", "just fainted", "unresponsive", "won't wake up", "not responding",
      "having a seizure", "just had a seizure", "convulsing", "kill myself", "suicide",
      "want to die", "end my life", "overdose", "overdosed", "took too many pills", "choking",
      "can't swallow", "bleeding won't stop", "bleeding heavily", "severe bleeding",
      "heart attack", "crushing chest pain"};
  kw.moderate_emergency = {
      "chest pain", "difficulty breathing", "shortness of breath", "unconscious", "collapsed",
      "seizure", "passed out", "heavy bleeding", "stroke", "anaphylaxis", "coma", "can't move",
      "paralyzed", "severe allergic"};
  kw.past_tense = {
      "had", "was", "ago", "last year", "last month", "last week", "few months ago",
      "years ago", "used to", "history of", "previously", "in the past", "recovered",
      "went to er", "went to the hospital", "was diagnosed"};
  kw.doctor_escalation = {
      "go to er", "go to the er", "emergency room", "call 911", "call emergency",
      "go to hospital immediately", "seek immediate", "life-threatening", "go to the nearest",
      "immediately go", "rush to", "don't wait", "call an ambulance",
      "needs immediate attention"};
  kw.selfcare = {
      "is this normal", "is it normal", "should i worry", "home remedy", "home remedies",
      "over the counter", "otc", "mild", "minor", "slight cold", "common cold", "vitamin",
      "nutrition", "diet", "supplement", "how long does", "will it go away",
      "go away on its own", "is it safe to", "can i take", "what can i do at home"};
  kw.selfcare_excluders = {
      "severe", "worst", "unbearable", "excruciating", "emergency", "can't breathe",
      "chest pain", "bleeding", "unconscious", "getting worse", "worsening", "spreading"};
  kw.urgent = {
      "getting worse", "worsening", "severe pain", "intense pain", "high fever", "blood in",
      "infection", "infected", "swelling", "swollen", "pus", "abscess", "lump", "can't sleep",
      "unable to eat", "unable to walk", "spreading", "excruciating", "unbearable",
      "not healing", "keeps coming back"};
  kw.schedule = {
      "for weeks", "for months", "persistent", "recurring", "follow up", "follow-up",
      "medication", "prescription", "chronic", "diagnosed with", "specialist", "referral",
      "second opinion", "test results", "lab results", "been having", "for a while",
      "on and off", "appointment", "check up", "check-up"};
  return kw;
}

void KeywordLists::validate() const {
  auto check = [](const std::vector<std::string>& list, std::string_view name) {
    for (const auto& p : list) {
      if (p.empty()) throw std::invalid_argument(fmt::format("empty phrase in '{}'", name));
      if (p != ascii_lower(p))
        throw std::invalid_argument(fmt::format("phrase '{}' in '{}' is not lowercase", p, name));
    }
  };
  check(strong_emergency, "strong_emergency");
  check(moderate_emergency, "moderate_emergency");
  check(past_tense, "past_tense");
  check(doctor_escalation, "doctor_escalation");
  check(selfcare, "selfcare");
  check(selfcare_excluders, "selfcare_excluders");
  check(urgent, "urgent");
  check(schedule, "schedule");
}

KeywordLists parse_keyword_overrides(std::string_view text, const KeywordLists& base) {
  KeywordLists kw = base;
  std::vector<std::string>* current = nullptr;
  std::map<std::string, bool> seen;
  for (auto [line, raw] : read_nonempty_lines(text)) {
    std::string_view s = raw;
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    if (s.empty() || s.front() == '#') continue;
    if (s.front() == '[' && s.back() == ']') {
      std::string name(s.substr(1, s.size() - 2));
      current = section_for(kw, name);
      if (current == nullptr)
        throw InputError(fmt::format("line {}: unknown keyword section '{}'", line, name));
      if (seen[name]) throw InputError(fmt::format("line {}: section '{}' repeated", line, name));
      seen[name] = true;
      current->clear();
      continue;
    }
    if (current == nullptr)
      throw InputError(fmt::format("line {}: phrase outside of a [section]", line));
    current->push_back(ascii_lower(s));
  }
  kw.validate();
  return kw;
}

KeywordLists load_keyword_overrides(const std::filesystem::path& path, const KeywordLists& base) {
  try {
    return parse_keyword_overrides(read_file(path), base);
  } catch (const InputError& e) {
    throw InputError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

EnrichmentScore emergency_score(const InquiryRecord& record, const KeywordLists& kw) {
  const std::string patient = ascii_lower(record.patient_text);
  const std::string physician = ascii_lower(record.physician_text);

  EnrichmentScore s;
  s.strong = matches(patient, kw.strong_emergency);

  std::vector<Span> strong_spans;
  for (const auto& p : s.strong) {
    auto occ = occurrences(patient, p);
    strong_spans.insert(strong_spans.end(), occ.begin(), occ.end());
  }
  for (const auto& p : kw.moderate_emergency) {
    for (auto [b, e] : occurrences(patient, p)) {
      bool covered = std::any_of(strong_spans.begin(), strong_spans.end(),
                                 [&](const Span& sp) { return sp.first <= b && e <= sp.second; });
      if (!covered) {
        s.moderate.push_back(p);
        break;
      }
    }
  }
  s.past_tense = matches(patient, kw.past_tense);
  s.doctor_escalation = matches(physician, kw.doctor_escalation);

  s.value = (s.strong.empty() ? 0 : kStrongWeight) + (s.moderate.empty() ? 0 : kModerateWeight) +
            (s.doctor_escalation.empty() ? 0 : kDoctorWeight) -
            (s.past_tense.empty() ? 0 : kPastTensePenalty);
  return s;
}

std::string_view to_string(Bucket b) noexcept {
  switch (b) {
    case Bucket::Emergency: return "emergency";
    case Bucket::SelfCare: return "selfcare";
    case Bucket::Urgent: return "urgent";
    case Bucket::Schedule: return "schedule";
    case Bucket::Unassigned: break;
  }
  return "unassigned";
}

BucketAssignment assign_bucket(const InquiryRecord& record, const EnrichmentScore& score,
                               const KeywordLists& kw) {
  BucketAssignment a;
  a.id = record.id;
  a.score = score.value;
  if (score.value >= 2) {
    a.bucket = Bucket::Emergency;
    return a;
  }
  if (score.value == 1) {
    a.bucket = Bucket::Emergency;
    a.low_priority_emergency = true;
    return a;
  }
  const std::string patient = ascii_lower(record.patient_text);
  if (any_match(patient, kw.selfcare) && !any_match(patient, kw.selfcare_excluders)) {
    a.bucket = Bucket::SelfCare;
  } else if (any_match(patient, kw.urgent)) {
    a.bucket = Bucket::Urgent;
  } else if (any_match(patient, kw.schedule)) {
    a.bucket = Bucket::Schedule;
  }
  return a;
}

std::vector<BucketAssignment> assign_buckets(const std::vector<InquiryRecord>& records,
                                             const KeywordLists& kw) {
  std::vector<BucketAssignment> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(assign_bucket(r, emergency_score(r, kw), kw));
  return out;
}

void SamplingPlan::validate() const {
  for (auto c : caps)
    if (c == 0) throw std::invalid_argument("bucket caps must be positive");
  if (pool_size != silver_size + gold_size + fewshot_size)
    throw std::invalid_argument(fmt::format("pool_size {} != silver {} + gold {} + fewshot {}",
                                            pool_size, silver_size, gold_size, fewshot_size));
  if (pool_size == 0) throw std::invalid_argument("pool_size must be positive");
}

std::array<std::size_t, kNumBuckets> bucket_quotas(const SamplingPlan& plan) {
  const double total_caps = static_cast<double>(std::accumulate(plan.caps.begin(), plan.caps.end(), std::size_t{0}));
  std::array<std::size_t, kNumBuckets> q{};
  long long assigned = 0;
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    q[b] = static_cast<std::size_t>(
        std::llround(static_cast<double>(plan.caps[b]) * static_cast<double>(plan.pool_size) / total_caps));
    assigned += static_cast<long long>(q[b]);
  }
  long long remainder = static_cast<long long>(plan.pool_size) - assigned;
  q[0] = static_cast<std::size_t>(static_cast<long long>(q[0]) + remainder);
  return q;
}

WorkingPool build_working_pool(const std::vector<InquiryRecord>& records,
                               const std::vector<BucketAssignment>& assignments,
                               const SamplingPlan& plan) {
  plan.validate();
  std::unordered_map<RecordId, const InquiryRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);

  std::array<std::vector<const BucketAssignment*>, kNumBuckets> buckets;
  for (const auto& a : assignments) {
    if (a.bucket == Bucket::Unassigned) continue;
    if (!by_id.contains(a.id))
      throw std::invalid_argument(fmt::format("assignment for unknown id {}", a.id));
    buckets[static_cast<std::size_t>(a.bucket)].push_back(&a);
  }

  WorkingPool pool;
  pool.quotas = bucket_quotas(plan);
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    auto& list = buckets[b];
    std::sort(list.begin(), list.end(), [](const BucketAssignment* x, const BucketAssignment* y) {
      if (x->score != y->score) return x->score > y->score;
      if (x->low_priority_emergency != y->low_priority_emergency) return !x->low_priority_emergency;
      return x->id < y->id;
    });
    if (list.size() > plan.caps[b]) list.resize(plan.caps[b]);
    pool.available[b] = list.size();
  }

  std::size_t total_available = std::accumulate(pool.available.begin(), pool.available.end(), std::size_t{0});
  if (total_available < plan.pool_size) {
    std::array<std::size_t, kNumBuckets> shortfall{};
    std::vector<std::string> detail;
    for (std::size_t b = 0; b < kNumBuckets; ++b) {
      shortfall[b] = pool.quotas[b] > pool.available[b] ? pool.quotas[b] - pool.available[b] : 0;
      if (shortfall[b] > 0)
        detail.push_back(fmt::format("{}: {} of {} (short {})", to_string(static_cast<Bucket>(b)), pool.available[b],
                                     pool.quotas[b], shortfall[b]));
    }
    throw ShortfallError(fmt::format("working pool needs {} candidates but only {} are assigned; {}",
                                     plan.pool_size, total_available, fmt::join(detail, "; ")),
                         shortfall);
  }

  std::size_t carry = 0;
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    std::size_t want = pool.quotas[b] + carry;
    pool.selected[b] = std::min(want, pool.available[b]);
    carry = want - pool.selected[b];
  }
  for (std::size_t b = 0; carry > 0; b = (b + 1) % kNumBuckets) {
    std::size_t extra = std::min(carry, pool.available[b] - pool.selected[b]);
    pool.selected[b] += extra;
    carry -= extra;
  }

  pool.records.reserve(plan.pool_size);
  for (std::size_t b = 0; b < kNumBuckets; ++b)
    for (std::size_t i = 0; i < pool.selected[b]; ++i)
      pool.records.push_back(*by_id.at(buckets[b][i]->id));
  return pool;
}

Splits split_pool(const std::vector<RecordId>& pool_ids, const SamplingPlan& plan) {
  plan.validate();
  if (pool_ids.size() != plan.pool_size)
    throw std::invalid_argument(
        fmt::format("pool has {} records, plan expects {}", pool_ids.size(), plan.pool_size));
  std::vector<RecordId> ids = pool_ids;
  DeterministicRng rng(plan.seed);
  rng.shuffle(ids);
  Splits s;
  auto first = ids.begin();
  s.silver.assign(first, first + static_cast<std::ptrdiff_t>(plan.silver_size));
  first += static_cast<std::ptrdiff_t>(plan.silver_size);
  s.gold.assign(first, first + static_cast<std::ptrdiff_t>(plan.gold_size));
  first += static_cast<std::ptrdiff_t>(plan.gold_size);
  s.fewshot.assign(first, ids.end());
  return s;
}

nlohmann::json sampling_manifest(const WorkingPool& pool, const Splits& splits,
                                 const SamplingPlan& plan,
                                 const std::vector<BucketAssignment>& assignments) {
  std::array<std::size_t, kNumBuckets + 1> assigned{};
  std::size_t low_priority = 0;
  for (const auto& a : assignments) {
    ++assigned[static_cast<std::size_t>(a.bucket)];
    if (a.low_priority_emergency) ++low_priority;
  }
  nlohmann::json buckets = nlohmann::json::object();
  for (std::size_t b = 0; b < kNumBuckets; ++b) {
    buckets[std::string(to_string(static_cast<Bucket>(b)))] = {
        {"cap", plan.caps[b]},
        {"assigned", assigned[b]},
        {"available", pool.available[b]},
        {"quota", pool.quotas[b]},
        {"selected", pool.selected[b]},
    };
  }
  return {
      {"seed", plan.seed},
      {"generator", DeterministicRng::kName},
      {"pool_size", plan.pool_size},
      {"unassigned", assigned[kNumBuckets]},
      {"low_priority_emergency", low_priority},
      {"buckets", std::move(buckets)},
      {"splits", {{"silver", splits.silver.size()}, {"gold", splits.gold.size()}, {"fewshot", splits.fewshot.size()}}},
      {"decisions",
       {{"score_weights", {{"strong", kStrongWeight}, {"moderate", kModerateWeight}, {"doctor_escalation", kDoctorWeight}, {"past_tense", -kPastTensePenalty}}},
        {"quota_rule", "round(cap*pool/sum(caps)), remainder to emergency, underfill carried to next bucket"},
        {"priority_key", "emergency score desc, low-priority last, id asc"}}},
  };
}

std::string format_id_list(const std::vector<RecordId>& ids) {
  std::string out;
  for (auto id : ids) out += fmt::format("{}\n", id);
  return out;
}

std::vector<RecordId> parse_id_list(std::string_view text) {
  std::vector<RecordId> ids;
  for (const auto& [line, s] : read_nonempty_lines(text)) {
    std::string_view v = s;
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
    while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front()))) v.remove_prefix(1);
    RecordId id = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), id);
    if (ec != std::errc{} || ptr != v.data() + v.size())
      throw InputError(fmt::format("line {}: '{}' is not an id", line, s));
    ids.push_back(id);
  }
  return ids;
}

}  // namespace triage
