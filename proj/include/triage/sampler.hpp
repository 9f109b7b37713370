#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "triage/corpus.hpp"
#include "triage/rng.hpp"

namespace triage {

/// Lowercase phrase lists driving enrichment scoring and bucket rules.
struct KeywordLists {
  std::vector<std::string> strong_emergency;
  std::vector<std::string> moderate_emergency;
  std::vector<std::string> past_tense;
  std::vector<std::string> doctor_escalation;
  std::vector<std::string> selfcare;
  std::vector<std::string> selfcare_excluders;
  std::vector<std::string> urgent;
  std::vector<std::string> schedule;

  /// The published keyword lists.
  static KeywordLists defaults();

  void validate() const;
};

/// Reads an override file of `[section]` headers followed by one phrase per
/// line (`#` starts a comment). Sections present replace the corresponding
/// list of `base`; absent sections keep it. Section names are the field names
/// above.
KeywordLists load_keyword_overrides(const std::filesystem::path& path,
                                    const KeywordLists& base = KeywordLists::defaults());
KeywordLists parse_keyword_overrides(std::string_view text,
                                     const KeywordLists& base = KeywordLists::defaults());

struct EnrichmentScore {
  int value = 0;
  std::vector<std::string> strong;
  std::vector<std::string> moderate;
  std::vector<std::string> past_tense;
  std::vector<std::string> doctor_escalation;
};

inline constexpr int kStrongWeight = 2;
inline constexpr int kModerateWeight = 1;
inline constexpr int kDoctorWeight = 1;
inline constexpr int kPastTensePenalty = 1;

/// Presence-based score: +2 strong, +1 moderate, +1 doctor escalation,
/// -1 past tense; each category counts at most once. Strong, moderate and
/// past-tense phrases are matched in the patient text, escalation phrases in
/// the physician text. Matching is case-insensitive substring search. A
/// moderate phrase whose every occurrence lies inside a strong-phrase match
/// ("chest pain" within "crushing chest pain") is not counted.
EnrichmentScore emergency_score(const InquiryRecord& record, const KeywordLists& kw);

enum class Bucket : std::uint8_t { Emergency = 0, SelfCare, Urgent, Schedule, Unassigned };

inline constexpr std::size_t kNumBuckets = 4;  // excluding Unassigned

std::string_view to_string(Bucket b) noexcept;

struct BucketAssignment {
  RecordId id = 0;
  Bucket bucket = Bucket::Unassigned;
  int score = 0;
  bool low_priority_emergency = false;
};

BucketAssignment assign_bucket(const InquiryRecord& record, const EnrichmentScore& score,
                               const KeywordLists& kw);

/// Scores and assigns every record.
std::vector<BucketAssignment> assign_buckets(const std::vector<InquiryRecord>& records,
                                             const KeywordLists& kw);

struct SamplingPlan {
  // emergency, selfcare, urgent, schedule
  std::array<std::size_t, kNumBuckets> caps = {1200, 800, 500, 500};
  std::size_t pool_size = 1040;
  std::size_t silver_size = 700;
  std::size_t gold_size = 300;
  std::size_t fewshot_size = 40;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Per-bucket quotas: round(cap * pool / sum(caps)), rounding remainder to
/// the emergency bucket.
std::array<std::size_t, kNumBuckets> bucket_quotas(const SamplingPlan& plan);

class ShortfallError : public std::runtime_error {
 public:
  ShortfallError(std::string what, std::array<std::size_t, kNumBuckets> shortfall)
      : std::runtime_error(std::move(what)), shortfall_(shortfall) {}
  const std::array<std::size_t, kNumBuckets>& shortfall() const noexcept { return shortfall_; }

 private:
  std::array<std::size_t, kNumBuckets> shortfall_;
};

struct WorkingPool {
  std::vector<InquiryRecord> records;  // bucket order, then priority order
  std::array<std::size_t, kNumBuckets> quotas{};
  std::array<std::size_t, kNumBuckets> available{};  // assigned, capped
  std::array<std::size_t, kNumBuckets> selected{};
};

/// Within each bucket candidates are ordered by (score desc, low-priority
/// last, id asc) and truncated at the bucket cap. Quota left unused by an
/// underfilled bucket moves to the next bucket in order, wrapping around.
WorkingPool build_working_pool(const std::vector<InquiryRecord>& records,
                               const std::vector<BucketAssignment>& assignments,
                               const SamplingPlan& plan);

struct Splits {
  std::vector<RecordId> silver;
  std::vector<RecordId> gold;
  std::vector<RecordId> fewshot;
};

Splits split_pool(const std::vector<RecordId>& pool_ids, const SamplingPlan& plan);

nlohmann::json sampling_manifest(const WorkingPool& pool, const Splits& splits,
                                 const SamplingPlan& plan,
                                 const std::vector<BucketAssignment>& assignments);

std::string format_id_list(const std::vector<RecordId>& ids);
std::vector<RecordId> parse_id_list(std::string_view text);

}  // namespace triage
