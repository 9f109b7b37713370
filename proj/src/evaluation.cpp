#include "triage/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include <fmt/format.h>

#include "triage/rng.hpp"

namespace triage {

namespace {

constexpr std::array<Metric, 11> kAllMetrics = {
    Metric::MacroF1,     Metric::Accuracy,          Metric::F1SelfCare,           Metric::F1ScheduleVisit,
    Metric::F1Urgent,    Metric::F1Emergency,       Metric::UnderTriage,          Metric::SevereUnderTriage,
    Metric::OverTriage,  Metric::UrgentOrHigherRecall, Metric::EmergencyRecall};

double ratio(std::size_t num, std::size_t den) {
  return static_cast<double>(num) / static_cast<double>(den);
}

std::size_t count_valid(std::span<const ScoredCase> cases) {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [](const ScoredCase& c) { return c.predicted.has_value(); }));
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted.front();
  double pos = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, sorted.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<ScoredCase> align(const LabelMap& gold, const PredictionSet& preds) {
  std::vector<ScoredCase> out;
  out.reserve(preds.entries.size());
  std::vector<RecordId> unknown;
  for (const auto& [id, outcome] : preds.entries) {
    auto g = gold.find(id);
    if (g == gold.end()) {
      unknown.push_back(id);
      continue;
    }
    out.push_back({g->second, label_if_valid(outcome)});
  }
  if (!unknown.empty())
    throw EvaluationError(fmt::format("{} prediction ids have no gold label (first: {})", unknown.size(), unknown.front()));
  return out;
}

ClassificationMetrics confusion_and_f1(std::span<const ScoredCase> cases) {
  ClassificationMetrics m;
  auto& cm = m.confusion;
  for (const auto& c : cases) {
    if (!c.predicted) continue;
    ++cm.counts[index_of(c.gold)][index_of(*c.predicted)];
    ++cm.valid_n;
  }
  if (cm.valid_n == 0) throw EvaluationError("no valid predictions to score");

  std::size_t correct = 0;
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::size_t tp = cm.counts[k][k];
    std::size_t pred_k = 0, gold_k = 0;
    for (std::size_t j = 0; j < kNumLabels; ++j) {
      pred_k += cm.counts[j][k];
      gold_k += cm.counts[k][j];
    }
    correct += tp;
    m.precision[k] = pred_k == 0 ? 0.0 : ratio(tp, pred_k);
    m.recall[k] = gold_k == 0 ? 0.0 : ratio(tp, gold_k);
    // 2PR/(P+R) rewritten over counts: one rounding instead of several.
    const std::size_t denom = pred_k + gold_k;
    m.f1[k] = denom == 0 ? 0.0 : ratio(2 * tp, denom);
  }
  m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / static_cast<double>(kNumLabels);
  m.accuracy = ratio(correct, cm.valid_n);
  return m;
}

ClassificationMetrics confusion_and_f1(const LabelMap& gold, const PredictionSet& preds) {
  auto cases = align(gold, preds);
  return confusion_and_f1(cases);
}

SafetyMetrics safety_metrics(std::span<const ScoredCase> cases) {
  SafetyMetrics s;
  std::size_t under = 0, severe = 0, over = 0, exact = 0;
  std::size_t high_gold = 0, high_hit = 0, emerg_gold = 0, emerg_hit = 0;
  for (const auto& c : cases) {
    if (!c.predicted) continue;
    ++s.valid_n;
    int g = severity_of(c.gold).level;
    int p = severity_of(*c.predicted).level;
    if (p < g) ++under;
    if (g - p >= 2) ++severe;
    if (p > g) ++over;
    if (p == g) ++exact;
    if (g >= 2) {
      ++high_gold;
      if (p >= 2) ++high_hit;
    }
    if (c.gold == TriageLabel::EmergencyReferral) {
      ++emerg_gold;
      if (*c.predicted == TriageLabel::EmergencyReferral) {
        ++emerg_hit;
      } else {
        ++s.emergency_false_negatives;
      }
    }
  }
  if (s.valid_n == 0) throw EvaluationError("no valid predictions to score");
  s.under_triage_rate = ratio(under, s.valid_n);
  s.severe_under_triage_rate = ratio(severe, s.valid_n);
  s.over_triage_rate = ratio(over, s.valid_n);
  s.exact_rate = ratio(exact, s.valid_n);
  if (high_gold > 0) s.urgent_or_higher_recall = ratio(high_hit, high_gold);
  if (emerg_gold > 0) s.emergency_recall = ratio(emerg_hit, emerg_gold);
  return s;
}

SafetyMetrics safety_metrics(const LabelMap& gold, const PredictionSet& preds) {
  auto cases = align(gold, preds);
  return safety_metrics(cases);
}

KappaResult cohens_kappa(std::span<const TriageLabel> a, std::span<const TriageLabel> b) {
  if (a.size() != b.size())
    throw EvaluationError(fmt::format("kappa needs equal lengths ({} vs {})", a.size(), b.size()));
  if (a.empty()) throw EvaluationError("kappa needs at least one pair");
  KappaResult r;
  r.n = a.size();
  std::array<std::size_t, kNumLabels> ma{}, mb{};
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ma[index_of(a[i])];
    ++mb[index_of(b[i])];
    if (a[i] == b[i]) ++agree;
  }
  const double n = static_cast<double>(r.n);
  r.observed_agreement = static_cast<double>(agree) / n;
  for (std::size_t k = 0; k < kNumLabels; ++k)
    r.expected_agreement += (static_cast<double>(ma[k]) / n) * (static_cast<double>(mb[k]) / n);
  if (r.expected_agreement >= 1.0) {
    r.note = "undefined: both raters use a single identical label, expected agreement is 1";
    return r;
  }
  r.kappa = (r.observed_agreement - r.expected_agreement) / (1.0 - r.expected_agreement);
  return r;
}

std::string_view to_string(Metric m) noexcept {
  switch (m) {
    case Metric::MacroF1: return "macro_f1";
    case Metric::Accuracy: return "accuracy";
    case Metric::F1SelfCare: return "f1_self_care";
    case Metric::F1ScheduleVisit: return "f1_schedule_visit";
    case Metric::F1Urgent: return "f1_urgent_clinician_review";
    case Metric::F1Emergency: return "f1_emergency_referral";
    case Metric::UnderTriage: return "under_triage_rate";
    case Metric::SevereUnderTriage: return "severe_under_triage_rate";
    case Metric::OverTriage: return "over_triage_rate";
    case Metric::UrgentOrHigherRecall: return "urgent_or_higher_recall";
    case Metric::EmergencyRecall: return "emergency_recall";
  }
  return "macro_f1";
}

Metric metric_from_string(std::string_view name) {
  for (auto m : kAllMetrics)
    if (to_string(m) == name) return m;
  throw std::invalid_argument(fmt::format("unknown metric '{}'", name));
}

std::optional<double> compute_metric(Metric m, std::span<const ScoredCase> cases) {
  if (count_valid(cases) == 0) return std::nullopt;
  switch (m) {
    case Metric::MacroF1: return confusion_and_f1(cases).macro_f1;
    case Metric::Accuracy: return confusion_and_f1(cases).accuracy;
    case Metric::F1SelfCare: return confusion_and_f1(cases).f1[0];
    case Metric::F1ScheduleVisit: return confusion_and_f1(cases).f1[1];
    case Metric::F1Urgent: return confusion_and_f1(cases).f1[2];
    case Metric::F1Emergency: return confusion_and_f1(cases).f1[3];
    case Metric::UnderTriage: return safety_metrics(cases).under_triage_rate;
    case Metric::SevereUnderTriage: return safety_metrics(cases).severe_under_triage_rate;
    case Metric::OverTriage: return safety_metrics(cases).over_triage_rate;
    case Metric::UrgentOrHigherRecall: return safety_metrics(cases).urgent_or_higher_recall;
    case Metric::EmergencyRecall: return safety_metrics(cases).emergency_recall;
  }
  return std::nullopt;
}

BootstrapCI bootstrap_ci(std::size_t n_cases, const ResampleStatistic& statistic,
                         const BootstrapOptions& options) {
  if (n_cases == 0) throw EvaluationError("bootstrap needs at least one case");
  if (options.replicates == 0) throw EvaluationError("bootstrap needs at least one replicate");
  if (!(options.confidence > 0.0 && options.confidence < 1.0))
    throw EvaluationError("confidence level must lie in (0, 1)");

  BootstrapCI ci;
  ci.seed = options.seed;
  ci.replicates = options.replicates;
  std::vector<std::size_t> identity(n_cases);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  ci.point = statistic(identity);

  std::vector<std::optional<double>> values(options.replicates);
  auto run_range = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(n_cases);
    for (std::size_t r = begin; r < end; ++r) {
      DeterministicRng rng(substream_seed(options.seed, r));
      for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n_cases));
      values[r] = statistic(idx);
    }
  };
  unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(options.replicates)));
  if (threads == 1) {
    run_range(0, options.replicates);
  } else {
    std::vector<std::jthread> pool;
    std::size_t chunk = (options.replicates + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      std::size_t b = t * chunk, e = std::min(options.replicates, b + chunk);
      if (b < e) pool.emplace_back(run_range, b, e);
    }
  }

  std::vector<double> defined;
  defined.reserve(values.size());
  for (const auto& v : values)
    if (v) defined.push_back(*v);
  ci.skipped = values.size() - defined.size();
  if (defined.empty()) throw EvaluationError("metric undefined on every bootstrap replicate");
  std::sort(defined.begin(), defined.end());
  double alpha = (1.0 - options.confidence) / 2.0;
  ci.lo = percentile(defined, alpha);
  ci.hi = percentile(defined, 1.0 - alpha);
  return ci;
}

BootstrapCI bootstrap_ci(std::span<const ScoredCase> cases, Metric metric, const BootstrapOptions& options) {
  if (count_valid(cases) < 2) throw EvaluationError("bootstrap needs at least two valid cases");
  auto stat = [&cases, metric](std::span<const std::size_t> idx) {
    thread_local std::vector<ScoredCase> resampled;
    resampled.clear();
    resampled.reserve(idx.size());
    for (auto i : idx) resampled.push_back(cases[i]);
    return compute_metric(metric, resampled);
  };
  return bootstrap_ci(cases.size(), stat, options);
}

std::string_view to_string(McNemarMethod m) noexcept {
  return m == McNemarMethod::ExactBinomial ? "exact-binomial" : "continuity-corrected";
}

McNemarResult mcnemar_test(const std::vector<bool>& correct_a, const std::vector<bool>& correct_b) {
  if (correct_a.size() != correct_b.size())
    throw EvaluationError(fmt::format("McNemar needs equal lengths ({} vs {})", correct_a.size(), correct_b.size()));
  McNemarResult r;
  r.n = correct_a.size();
  for (std::size_t i = 0; i < correct_a.size(); ++i) {
    if (correct_a[i] && !correct_b[i]) ++r.b;
    if (!correct_a[i] && correct_b[i]) ++r.c;
  }
  const std::size_t discordant = r.b + r.c;
  if (discordant < kMcNemarExactBelow) {
    r.method = McNemarMethod::ExactBinomial;
    if (discordant == 0) {
      r.p_value = 1.0;
      return r;
    }
    // P(X <= min(b, c)) for X ~ Binomial(b + c, 1/2), summed term by term.
    std::size_t k_max = std::min(r.b, r.c);
    double term = std::pow(0.5, static_cast<double>(discordant));  // C(n,0) / 2^n
    double tail = 0.0;
    for (std::size_t k = 0; k <= k_max; ++k) {
      tail += term;
      term *= static_cast<double>(discordant - k) / static_cast<double>(k + 1);
    }
    r.statistic = static_cast<double>(std::min(r.b, r.c));
    r.p_value = std::min(1.0, 2.0 * tail);
    return r;
  }
  r.method = McNemarMethod::ContinuityCorrected;
  double diff = std::abs(static_cast<double>(r.b) - static_cast<double>(r.c)) - 1.0;
  diff = std::max(diff, 0.0);
  r.statistic = diff * diff / static_cast<double>(discordant);
  r.p_value = std::erfc(std::sqrt(r.statistic / 2.0));
  return r;
}

McNemarResult mcnemar_test(const LabelMap& gold, const PredictionSet& a, const PredictionSet& b) {
  if (a.split_digest != b.split_digest)
    throw EvaluationError(fmt::format("prediction sets cover different splits ({} vs {})", a.config_name(), b.config_name()));
  std::vector<bool> ca, cb;
  for (const auto& [id, outcome_a] : a.entries) {
    auto it = b.entries.find(id);
    if (it == b.entries.end()) throw EvaluationError(fmt::format("id {} missing from {}", id, b.config_name()));
    auto la = label_if_valid(outcome_a);
    auto lb = label_if_valid(it->second);
    if (!la || !lb) continue;
    auto g = gold.find(id);
    if (g == gold.end()) throw EvaluationError(fmt::format("id {} has no gold label", id));
    ca.push_back(*la == g->second);
    cb.push_back(*lb == g->second);
  }
  return mcnemar_test(ca, cb);
}

double parse_fail_rate(const PredictionSet& preds) {
  if (preds.entries.empty()) throw EvaluationError("parse-fail rate of an empty prediction set");
  return ratio(preds.failures(), preds.entries.size());
}

ModelEvaluation evaluate_model(const LabelMap& gold, const PredictionSet& preds, const BootstrapOptions& options) {
  ModelEvaluation e;
  e.config_name = preds.config_name();
  e.model_name = preds.model_name;
  e.setting = preds.setting;
  auto cases = align(gold, preds);
  e.n_total = cases.size();
  e.valid_n = count_valid(cases);
  e.parse_fail_rate = parse_fail_rate(preds);
  for (const auto& [id, o] : preds.entries)
    if (const auto* p = std::get_if<StructuredPrediction>(&o); p && p->leniently_parsed) ++e.lenient_n;
  e.classification = confusion_and_f1(cases);
  e.safety = safety_metrics(cases);
  if (e.valid_n >= 2) {
    for (auto m : kAllMetrics) {
      try {
        e.intervals[m] = bootstrap_ci(cases, m, options);
      } catch (const EvaluationError&) {
        // metric undefined on every replicate (e.g. no emergency cases in gold)
      }
    }
  }
  return e;
}

nlohmann::json to_json(const BootstrapCI& ci) {
  return {{"point", opt_json(ci.point)}, {"lo", ci.lo}, {"hi", ci.hi},
          {"replicates", ci.replicates}, {"skipped", ci.skipped}, {"seed", ci.seed}};
}

BootstrapCI bootstrap_ci_from_json(const nlohmann::json& j) {
  BootstrapCI ci;
  ci.point = opt_from_json(j.at("point"));
  ci.lo = j.at("lo").get<double>();
  ci.hi = j.at("hi").get<double>();
  ci.replicates = j.at("replicates").get<std::size_t>();
  ci.skipped = j.at("skipped").get<std::size_t>();
  ci.seed = j.at("seed").get<std::uint64_t>();
  return ci;
}

nlohmann::json to_json(const McNemarResult& r) {
  return {{"b", r.b}, {"c", r.c}, {"n", r.n}, {"statistic", r.statistic},
          {"p_value", r.p_value}, {"method", to_string(r.method)}};
}

nlohmann::json to_json(const ModelEvaluation& e) {
  const auto& c = e.classification;
  const auto& s = e.safety;
  nlohmann::json per_class = nlohmann::json::object();
  for (auto l : kAllLabels) {
    auto k = index_of(l);
    per_class[std::string(to_string(l))] = {{"precision", c.precision[k]}, {"recall", c.recall[k]}, {"f1", c.f1[k]}};
  }
  nlohmann::json intervals = nlohmann::json::object();
  for (const auto& [m, ci] : e.intervals) intervals[std::string(to_string(m))] = to_json(ci);
  return {
      {"config", e.config_name},
      {"model", e.model_name},
      {"setting", e.setting},
      {"n_total", e.n_total},
      {"valid_n", e.valid_n},
      {"parse_fail_rate", e.parse_fail_rate},
      {"lenient_n", e.lenient_n},
      {"confusion", c.confusion.counts},
      {"macro_f1", c.macro_f1},
      {"accuracy", c.accuracy},
      {"per_class", std::move(per_class)},
      {"safety",
       {{"under_triage_rate", s.under_triage_rate},
        {"severe_under_triage_rate", s.severe_under_triage_rate},
        {"over_triage_rate", s.over_triage_rate},
        {"exact_rate", s.exact_rate},
        {"urgent_or_higher_recall", opt_json(s.urgent_or_higher_recall)},
        {"emergency_recall", opt_json(s.emergency_recall)},
        {"emergency_false_negatives", s.emergency_false_negatives}}},
      {"intervals", std::move(intervals)},
  };
}

ModelEvaluation model_evaluation_from_json(const nlohmann::json& j) {
  ModelEvaluation e;
  e.config_name = j.at("config").get<std::string>();
  e.model_name = j.at("model").get<std::string>();
  e.setting = j.at("setting").get<std::string>();
  e.n_total = j.at("n_total").get<std::size_t>();
  e.valid_n = j.at("valid_n").get<std::size_t>();
  e.parse_fail_rate = j.at("parse_fail_rate").get<double>();
  e.lenient_n = j.value("lenient_n", std::size_t{0});
  auto& c = e.classification;
  c.confusion.counts = j.at("confusion").get<decltype(c.confusion.counts)>();
  c.confusion.valid_n = e.valid_n;
  c.macro_f1 = j.at("macro_f1").get<double>();
  c.accuracy = j.at("accuracy").get<double>();
  for (auto l : kAllLabels) {
    const auto& pc = j.at("per_class").at(std::string(to_string(l)));
    c.precision[index_of(l)] = pc.at("precision").get<double>();
    c.recall[index_of(l)] = pc.at("recall").get<double>();
    c.f1[index_of(l)] = pc.at("f1").get<double>();
  }
  const auto& s = j.at("safety");
  e.safety.valid_n = e.valid_n;
  e.safety.under_triage_rate = s.at("under_triage_rate").get<double>();
  e.safety.severe_under_triage_rate = s.at("severe_under_triage_rate").get<double>();
  e.safety.over_triage_rate = s.at("over_triage_rate").get<double>();
  e.safety.exact_rate = s.at("exact_rate").get<double>();
  e.safety.urgent_or_higher_recall = opt_from_json(s.at("urgent_or_higher_recall"));
  e.safety.emergency_recall = opt_from_json(s.at("emergency_recall"));
  e.safety.emergency_false_negatives = s.at("emergency_false_negatives").get<std::size_t>();
  for (const auto& [name, cj] : j.at("intervals").items()) {
    e.intervals[metric_from_string(name)] = bootstrap_ci_from_json(cj);
  }
  return e;
}

}  // namespace triage
