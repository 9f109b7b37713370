#include <doctest.h>

#include "triage/io.hpp"
#include "triage/prompt.hpp"
#include "../support/tempdir.hpp"

using namespace triage;

namespace {

std::vector<LabeledRecord> pool_with(std::array<int, 4> per_class) {
  std::vector<LabeledRecord> pool;
  RecordId id = 100;
  // Interleave classes so input order differs from id-within-class order.
  for (int round = 0; round < 5; ++round)
    for (std::size_t k = 0; k < 4; ++k)
      if (round < per_class[k]) pool.push_back({id--, "msg " + std::to_string(id), kAllLabels[k]});
  return pool;
}

std::size_t count(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string_view::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("prompt") {
  TEST_CASE("settings") {
    CHECK(PromptSetting::from_shots(0).name() == "0-shot");
    CHECK(PromptSetting::from_shots(12).per_class() == 3);
    CHECK(PromptSetting::from_shots(4).per_class() == 1);
    CHECK_THROWS(PromptSetting::from_shots(8));
  }

  TEST_CASE("one demonstration per class in severity order") {
    auto demos = select_demonstrations(pool_with({3, 3, 3, 3}), 1);
    REQUIRE(demos.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(demos[k].label == kAllLabels[k]);
      CHECK(demos[k].rank == 1);
    }
  }

  TEST_CASE("twelve demonstrations extend the four") {
    auto pool = pool_with({3, 3, 3, 3});
    auto four = select_demonstrations(pool, 1);
    auto twelve = select_demonstrations(pool, 3);
    REQUIRE(twelve.size() == 12);
    for (std::size_t k = 0; k < 4; ++k) CHECK(twelve[k].id == four[k].id);
    std::vector<Demonstration> rank1;
    for (const auto& d : twelve)
      if (d.rank == 1) rank1.push_back(d);
    REQUIRE(rank1.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(rank1[k].id == four[k].id);
    // Within a class ids ascend with rank.
    for (std::size_t i = 4; i + 1 < twelve.size(); ++i)
      if (twelve[i].label == twelve[i + 1].label) CHECK(twelve[i].id < twelve[i + 1].id);
  }

  TEST_CASE("lowest ids are chosen unless ids are preferred") {
    auto pool = pool_with({3, 3, 3, 3});
    RecordId lowest_selfcare = 1000, highest_selfcare = -1;
    for (const auto& r : pool)
      if (r.label == TriageLabel::SelfCare) {
        lowest_selfcare = std::min(lowest_selfcare, r.id);
        highest_selfcare = std::max(highest_selfcare, r.id);
      }
    CHECK(select_demonstrations(pool, 1)[0].id == lowest_selfcare);
    CHECK(select_demonstrations(pool, 1, {highest_selfcare})[0].id == highest_selfcare);
    CHECK_THROWS(select_demonstrations(pool, 1, {424242}));
  }

  TEST_CASE("too few examples of a class names it") {
    CHECK_THROWS_WITH(select_demonstrations(pool_with({3, 3, 3, 2}), 3), doctest::Contains("emergency-referral"));
    CHECK(select_demonstrations(pool_with({0, 0, 0, 0}), 0).empty());
  }

  TEST_CASE("base prompt shape") {
    auto bp = default_base_prompt();
    CHECK(bp.starts_with("### Role: You are a clinical workflow triage classifier for online patient inquiries."));
    CHECK(count(bp, kPatientPlaceholder) == 1);
    CHECK(bp.find("\"insufficient_info\": true | false") != std::string_view::npos);
    CHECK(bp.ends_with("Patient message:\n{patient_message}\n"));
  }

  TEST_CASE("zero-shot rendering is the substituted template") {
    const std::string msg = "My knee hurts after running.";
    auto p = render_prompt(PromptSetting::from_shots(0), {}, msg);
    std::string expected(default_base_prompt());
    expected.replace(expected.find(kPatientPlaceholder), kPatientPlaceholder.size(), msg);
    CHECK(p.full_text() == expected);
    CHECK(count(p.user_text, msg) == 1);
    CHECK(count(p.user_text, "Output:") == 0);
    CHECK(p.user_text.starts_with("Patient message:"));
    CHECK(p.system_text.find("{patient_message}") == std::string::npos);
  }

  TEST_CASE("rendering is deterministic and content addressed") {
    auto demos = select_demonstrations(pool_with({3, 3, 3, 3}), 1);
    auto a = render_prompt(PromptSetting::from_shots(4), demos, "hello");
    auto b = render_prompt(PromptSetting::from_shots(4), demos, "hello");
    auto c = render_prompt(PromptSetting::from_shots(4), demos, "hello!");
    CHECK(a.content_hash == b.content_hash);
    CHECK(a.content_hash != c.content_hash);
    std::array<std::string, 2> parts = {a.system_text, a.user_text};
    CHECK(a.content_hash == sha256_hex_parts(parts));
  }

  TEST_CASE("twelve-shot block starts with the four-shot block") {
    auto pool = pool_with({3, 3, 3, 3});
    auto four = render_demonstration_block(select_demonstrations(pool, 1));
    auto twelve = render_demonstration_block(select_demonstrations(pool, 3));
    CHECK(twelve.starts_with(four));
    CHECK(count(twelve, "Output:") == 12);
    auto p = render_prompt(PromptSetting::from_shots(12), select_demonstrations(pool, 3), "q");
    CHECK(p.user_text.starts_with(four));
  }

  TEST_CASE("demonstration block format") {
    std::vector<Demonstration> d = {{1, "I have a cold", TriageLabel::SelfCare, 1}};
    CHECK(render_demonstration_block(d) == "Patient message:\n\"I have a cold\"\nOutput:\n{\"label\":\"self-care\"}\n\n");
  }

  TEST_CASE("demonstrations may sit in the system text") {
    auto demos = select_demonstrations(pool_with({1, 1, 1, 1}), 1);
    PromptTemplate t;
    t.demonstrations_in_system = true;
    auto p = render_prompt(PromptSetting::from_shots(4), demos, "q", t);
    CHECK(count(p.system_text, "Output:") == 4);
    CHECK(count(p.user_text, "Output:") == 0);
    CHECK_THROWS(render_prompt(PromptSetting::from_shots(4), {}, "q"));
  }

  TEST_CASE("custom template files") {
    testsupport::TempDir dir("prompt");
    write_file_atomic(dir / "t.txt", "Classify.\nPatient message:\n{patient_message}\nAnswer in JSON.\n");
    auto t = PromptTemplate::load(dir / "t.txt");
    auto p = render_prompt(PromptSetting::from_shots(0), {}, "ouch", t);
    CHECK(p.system_text == "Classify.\n");
    CHECK(p.user_text == "Patient message:\nouch\nAnswer in JSON.\n");
    write_file_atomic(dir / "bad.txt", "no slot here");
    CHECK_THROWS_AS(PromptTemplate::load(dir / "bad.txt"), InputError);
  }
}
