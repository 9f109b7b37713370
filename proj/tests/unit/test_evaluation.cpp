#include <doctest.h>

#include <cmath>

#include "triage/evaluation.hpp"
#include "triage/rng.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace triage;
using testsupport::gold_map;
using testsupport::L;
using testsupport::pred_set;

namespace {

std::vector<ScoredCase> cases(const std::vector<int>& gold, const std::vector<int>& pred) {
  std::vector<ScoredCase> v;
  for (std::size_t i = 0; i < gold.size(); ++i)
    v.push_back({L(gold[i]), pred[i] < 0 ? std::nullopt : std::optional<TriageLabel>(L(pred[i]))});
  return v;
}

bool same(std::optional<double> a, std::optional<double> b) {
  return a.has_value() == b.has_value() && (!a || *a == *b);
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("hand-worked four-case fixture") {
    auto c = cases({0, 1, 2, 3}, {0, 1, 1, 3});
    auto m = confusion_and_f1(c);
    CHECK(m.f1[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.f1[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.f1[2] == 0.0);
    CHECK(m.f1[3] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(m.macro_f1 - 0.6666666666666666) < 1e-9);
    CHECK(m.accuracy == 0.75);

    auto s = safety_metrics(c);
    CHECK(std::abs(s.under_triage_rate - 0.25) < 1e-9);
    CHECK(s.severe_under_triage_rate == 0.0);
    CHECK(s.over_triage_rate == 0.0);
    REQUIRE(s.urgent_or_higher_recall);
    CHECK(std::abs(*s.urgent_or_higher_recall - 0.5) < 1e-9);
    CHECK(s.emergency_recall == 1.0);
    CHECK(s.emergency_false_negatives == 0);
  }

  TEST_CASE("perfect predictions and exclusion of failures") {
    auto perfect = confusion_and_f1(cases({0, 1, 2, 3}, {0, 1, 2, 3}));
    CHECK(perfect.macro_f1 == 1.0);
    CHECK(perfect.accuracy == 1.0);
    auto one_fail = confusion_and_f1(cases({0, 1, 2, 3}, {0, -1, 2, 3}));
    CHECK(one_fail.confusion.valid_n == 3);
    std::size_t sum = 0;
    for (const auto& row : one_fail.confusion.counts)
      for (auto v : row) sum += v;
    CHECK(sum == 3);
    CHECK_THROWS_AS(confusion_and_f1(cases({0, 1}, {-1, -1})), EvaluationError);
  }

  TEST_CASE("safety definitions") {
    auto always_er = safety_metrics(cases({0, 1, 2, 3, 3}, {3, 3, 3, 3, 3}));
    CHECK(always_er.under_triage_rate == 0.0);
    CHECK(always_er.emergency_recall == 1.0);
    auto severe = safety_metrics(cases({3}, {0}));
    CHECK(severe.severe_under_triage_rate == 1.0);
    CHECK(severe.emergency_false_negatives == 1);
    auto no_high = safety_metrics(cases({0, 1}, {0, 0}));
    CHECK_FALSE(no_high.urgent_or_higher_recall.has_value());
    CHECK_FALSE(no_high.emergency_recall.has_value());
  }

  TEST_CASE("exhaustive agreement with the naive oracle on four cases") {
    // Gold over 4^4 assignments, predictions over 5^4 (including invalid).
    std::size_t checked = 0, mismatches = 0;
    std::vector<int> g(4), p(4);
    for (int gi = 0; gi < 256; ++gi) {
      for (int k = 0, x = gi; k < 4; ++k, x /= 4) g[k] = x % 4;
      for (int pi = 0; pi < 625; ++pi) {
        for (int k = 0, x = pi; k < 4; ++k, x /= 5) p[k] = x % 5 - 1;
        auto ref = testsupport::naive_metrics(g, p);
        auto c = cases(g, p);
        ++checked;
        if (ref.valid == 0) {
          // Nothing to score: both entry points reject the input.
          bool threw_f1 = false, threw_safety = false;
          try { (void)confusion_and_f1(c); } catch (const EvaluationError&) { threw_f1 = true; }
          try { (void)safety_metrics(c); } catch (const EvaluationError&) { threw_safety = true; }
          if (!threw_f1 || !threw_safety) ++mismatches;
          continue;
        }
        auto m = confusion_and_f1(c);
        auto s = safety_metrics(c);
        bool ok = m.macro_f1 == ref.macro_f1 && m.accuracy == ref.accuracy && s.under_triage_rate == ref.under &&
                  s.severe_under_triage_rate == ref.severe && s.over_triage_rate == ref.over &&
                  same(s.urgent_or_higher_recall, ref.urgent_recall) && same(s.emergency_recall, ref.emergency_recall) &&
                  s.emergency_false_negatives == static_cast<std::size_t>(ref.emergency_fn) &&
                  m.confusion.valid_n == static_cast<std::size_t>(ref.valid);
        for (int a = 0; a < 4; ++a) {
          ok = ok && m.f1[a] == ref.f1[a];
          for (int b = 0; b < 4; ++b) ok = ok && m.confusion.counts[a][b] == static_cast<std::size_t>(ref.confusion[a][b]);
        }
        if (!ok) ++mismatches;
      }
    }
    CHECK(checked == 160000);
    CHECK(mismatches == 0);
  }

  TEST_CASE("safety identities under fuzzing") {
    DeterministicRng rng(2024);
    std::size_t violations = 0;
    for (int t = 0; t < 20000; ++t) {
      const auto n = 1 + rng.below(20);
      std::vector<int> g(n), p(n), er(n, 3);
      for (std::size_t i = 0; i < n; ++i) {
        g[i] = static_cast<int>(rng.below(4));
        p[i] = static_cast<int>(rng.below(4));
      }
      auto s = safety_metrics(cases(g, p));
      if (std::abs(s.under_triage_rate + s.over_triage_rate + s.exact_rate - 1.0) > 1e-12) ++violations;
      if (s.severe_under_triage_rate > s.under_triage_rate) ++violations;
      auto e = safety_metrics(cases(g, er));
      if (e.under_triage_rate != 0.0) ++violations;
      if (e.emergency_recall && *e.emergency_recall != 1.0) ++violations;
    }
    CHECK(violations == 0);
  }

  TEST_CASE("kappa") {
    using T = TriageLabel;
    std::vector<T> a = {T::SelfCare, T::SelfCare, T::ScheduleVisit, T::ScheduleVisit};
    std::vector<T> b = {T::SelfCare, T::ScheduleVisit, T::SelfCare, T::ScheduleVisit};
    auto k = cohens_kappa(a, b);
    CHECK(k.observed_agreement == 0.5);
    CHECK(k.expected_agreement == 0.5);
    REQUIRE(k.kappa);
    CHECK(std::abs(*k.kappa) < 1e-12);
    CHECK(cohens_kappa(a, a).kappa == 1.0);
    std::vector<T> c(5, T::UrgentClinicianReview);
    auto undefined = cohens_kappa(c, c);
    CHECK_FALSE(undefined.kappa.has_value());
    CHECK_FALSE(undefined.note.empty());
    CHECK_THROWS_AS(cohens_kappa(a, c), EvaluationError);
  }

  TEST_CASE("McNemar exact and corrected") {
    auto with = [](int b, int c, int both) {
      std::vector<bool> x, y;
      for (int i = 0; i < b; ++i) x.push_back(true), y.push_back(false);
      for (int i = 0; i < c; ++i) x.push_back(false), y.push_back(true);
      for (int i = 0; i < both; ++i) x.push_back(true), y.push_back(true);
      return mcnemar_test(x, y);
    };
    auto r = with(10, 2, 5);
    CHECK(r.method == McNemarMethod::ExactBinomial);
    CHECK(std::abs(r.p_value - 2.0 * 79.0 / 4096.0) < 1e-12);
    CHECK(std::abs(r.p_value - testsupport::naive_mcnemar_exact(10, 2)) < 1e-12);
    CHECK(std::abs(r.p_value - 0.0386) < 1e-4);

    CHECK(with(0, 0, 10).p_value == 1.0);
    CHECK(with(4, 4, 0).p_value == 1.0);
    auto big = with(20, 20, 0);
    CHECK(big.method == McNemarMethod::ContinuityCorrected);
    CHECK(big.statistic == 0.0);
    CHECK(big.p_value == doctest::Approx(1.0));

    auto corr = with(30, 10, 0);
    const double stat = (20.0 - 1.0) * (20.0 - 1.0) / 40.0;
    CHECK(corr.statistic == doctest::Approx(stat));
    CHECK(corr.p_value == doctest::Approx(std::erfc(std::sqrt(stat / 2.0))).epsilon(1e-9));

    for (int b = 0; b < 25; ++b)
      CHECK(with(b, 24 - b, 0).p_value == doctest::Approx(testsupport::naive_mcnemar_exact(b, 24 - b)).epsilon(1e-12));
  }

  TEST_CASE("McNemar over prediction sets uses jointly valid cases") {
    auto gold = gold_map({0, 1, 2, 3, 0});
    auto a = pred_set({0, 1, 2, 3, -1}, "a");
    auto b = pred_set({1, 1, 2, 0, 0}, "b");
    auto r = mcnemar_test(gold, a, b);
    CHECK(r.n == 4);
    CHECK(r.b == 2);
    CHECK(r.c == 0);
    auto other = pred_set({0, 1, 2}, "c");
    CHECK_THROWS_AS(mcnemar_test(gold, a, other), EvaluationError);
  }

  TEST_CASE("bootstrap") {
    auto perfect = cases({0, 1, 2, 3, 0, 1}, {0, 1, 2, 3, 0, 1});
    auto ci = bootstrap_ci(perfect, Metric::Accuracy, {200, 7, 0.95, 1});
    CHECK(ci.lo == 1.0);
    CHECK(ci.hi == 1.0);

    auto mixed = cases({0, 1, 2, 3, 0, 1, 2, 3, 2, 1}, {0, 1, 1, 3, 0, 2, 2, 3, 3, 1});
    auto a = bootstrap_ci(mixed, Metric::Accuracy, {500, 42, 0.95, 1});
    auto b = bootstrap_ci(mixed, Metric::Accuracy, {500, 42, 0.95, 1});
    auto threaded = bootstrap_ci(mixed, Metric::Accuracy, {500, 42, 0.95, 4});
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.lo == threaded.lo);
    CHECK(a.hi == threaded.hi);
    REQUIRE(a.point);
    CHECK(*a.point == 0.7);
    CHECK(a.lo <= *a.point);
    CHECK(*a.point <= a.hi);
    CHECK(a.lo < a.hi);
    CHECK(a.replicates == 500);
    CHECK_THROWS_AS(bootstrap_ci(cases({0, 1}, {0, -1}), Metric::Accuracy), EvaluationError);
  }

  TEST_CASE("bootstrap percentile interpolation") {
    // Statistic equals the replicate's first index: percentiles follow the
    // order statistics of those draws.
    BootstrapOptions opt{4, 1, 0.5, 1};
    std::vector<double> draws;
    auto ci = bootstrap_ci(
        10,
        [&](std::span<const std::size_t> idx) {
          draws.push_back(static_cast<double>(idx[0]));
          return std::optional<double>(static_cast<double>(idx[0]));
        },
        opt);
    // The first call is the point estimate over the identity resample.
    REQUIRE(draws.size() == 5);
    draws.erase(draws.begin());
    std::sort(draws.begin(), draws.end());
    // 25th and 75th percentiles of four sorted values with linear interpolation.
    auto pct = [&](double q) {
      double pos = q * 3.0;
      auto lo = static_cast<std::size_t>(std::floor(pos));
      auto hi = std::min<std::size_t>(lo + 1, 3);
      return draws[lo] + (pos - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
    };
    CHECK(ci.lo == doctest::Approx(pct(0.25)));
    CHECK(ci.hi == doctest::Approx(pct(0.75)));
  }

  TEST_CASE("metric names round-trip") {
    for (auto m : {Metric::MacroF1, Metric::Accuracy, Metric::F1SelfCare, Metric::F1ScheduleVisit, Metric::F1Urgent,
                   Metric::F1Emergency, Metric::UnderTriage, Metric::SevereUnderTriage, Metric::OverTriage,
                   Metric::UrgentOrHigherRecall, Metric::EmergencyRecall})
      CHECK(metric_from_string(to_string(m)) == m);
  }

  TEST_CASE("model evaluation serializes losslessly") {
    auto gold = gold_map({0, 1, 2, 3, 0, 1, 2, 3});
    auto p = pred_set({0, 1, 1, 3, -1, 2, 2, 3}, "llama", "4-shot");
    auto e = evaluate_model(gold, p, {100, 3, 0.95, 1});
    CHECK(e.config_name == "llama@4-shot");
    CHECK(e.n_total == 8);
    CHECK(e.valid_n == 7);
    CHECK(e.parse_fail_rate == 0.125);
    CHECK(e.intervals.contains(Metric::MacroF1));
    auto back = model_evaluation_from_json(to_json(e));
    CHECK(to_json(back).dump() == to_json(e).dump());
  }

  TEST_CASE("alignment rejects unknown ids") {
    auto gold = gold_map({0, 1});
    auto p = pred_set({0, 1, 2});
    CHECK_THROWS_AS(align(gold, p), EvaluationError);
  }
}
