#include "triage/consensus.hpp"

#include <span>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace triage {

std::string_view to_string(Verdict v) noexcept {
  return v == Verdict::AutoAccept ? "auto-accept" : "escalate";
}

std::string_view to_string(ConsensusReason r) noexcept {
  switch (r) {
    case ConsensusReason::Agreement: return "agreement";
    case ConsensusReason::Disagreement: return "disagreement";
    case ConsensusReason::InvalidOutput: return "invalid-output";
  }
  return "invalid-output";
}

std::vector<ConsensusDecision> decide_consensus(const PredictionSet& a, const PredictionSet& b) {
  std::vector<RecordId> only_a, only_b;
  for (const auto& [id, _] : a.entries)
    if (!b.entries.contains(id)) only_a.push_back(id);
  for (const auto& [id, _] : b.entries)
    if (!a.entries.contains(id)) only_b.push_back(id);
  if (!only_a.empty() || !only_b.empty())
    throw EvaluationError(fmt::format("consensus needs identical case ids; only in {}: [{}]; only in {}: [{}]",
                                      a.config_name(), fmt::join(only_a, ", "), b.config_name(),
                                      fmt::join(only_b, ", ")));
  std::vector<ConsensusDecision> out;
  out.reserve(a.entries.size());
  for (const auto& [id, oa] : a.entries) {
    auto la = label_if_valid(oa);
    auto lb = label_if_valid(b.entries.at(id));
    ConsensusDecision d;
    d.id = id;
    if (!la || !lb) {
      d.reason = ConsensusReason::InvalidOutput;
    } else if (*la == *lb) {
      d.verdict = Verdict::AutoAccept;
      d.label = *la;
      d.reason = ConsensusReason::Agreement;
    } else {
      d.reason = ConsensusReason::Disagreement;
    }
    out.push_back(d);
  }
  return out;
}

namespace {

struct CaseView {
  TriageLabel gold;
  std::optional<TriageLabel> accepted;  // empty when escalated
  bool invalid = false;
};

std::vector<CaseView> views_of(const LabelMap& gold, const std::vector<ConsensusDecision>& decisions) {
  std::vector<CaseView> v;
  v.reserve(decisions.size());
  std::vector<RecordId> missing;
  for (const auto& d : decisions) {
    auto g = gold.find(d.id);
    if (g == gold.end()) {
      missing.push_back(d.id);
      continue;
    }
    v.push_back({g->second, d.verdict == Verdict::AutoAccept ? d.label : std::nullopt,
                 d.reason == ConsensusReason::InvalidOutput});
  }
  if (!missing.empty()) throw EvaluationError(fmt::format("no gold label for ids: {}", fmt::join(missing, ", ")));
  return v;
}

ConsensusReport report_of(std::span<const CaseView> cases) {
  ConsensusReport r;
  r.n = cases.size();
  if (r.n == 0) throw EvaluationError("consensus report needs at least one case");
  std::vector<ScoredCase> accepted, oracle;
  std::array<std::size_t, kNumLabels> correct_by_pred{}, gold_accepted{}, correct_by_gold{};
  for (const auto& c : cases) {
    if (c.accepted) {
      accepted.push_back({c.gold, c.accepted});
      oracle.push_back({c.gold, c.accepted});
      auto p = index_of(*c.accepted), g = index_of(c.gold);
      ++r.accepted_by_prediction[p];
      ++gold_accepted[g];
      if (p == g) {
        ++correct_by_pred[p];
        ++correct_by_gold[g];
      }
    } else {
      ++r.escalated;
      if (c.invalid) ++r.invalid_escalations;
      oracle.push_back({c.gold, c.gold});
    }
  }
  r.accepted = accepted.size();
  const double n = static_cast<double>(r.n);
  r.escalation_rate = static_cast<double>(r.escalated) / n;
  r.invalid_escalation_rate = static_cast<double>(r.invalid_escalations) / n;
  if (!accepted.empty()) {
    auto m = confusion_and_f1(accepted);
    r.consensus_accuracy = m.accuracy;
    r.consensus_macro_f1 = m.macro_f1;
  }
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    if (r.accepted_by_prediction[k] > 0)
      r.consensus_accuracy_by_prediction[k] =
          static_cast<double>(correct_by_pred[k]) / static_cast<double>(r.accepted_by_prediction[k]);
    if (gold_accepted[k] > 0)
      r.consensus_accuracy_by_gold[k] = static_cast<double>(correct_by_gold[k]) / static_cast<double>(gold_accepted[k]);
  }
  auto o = confusion_and_f1(oracle);
  r.oracle_hitl_macro_f1 = o.macro_f1;
  r.oracle_hitl_accuracy = o.accuracy;
  r.oracle_hitl_f1 = o.f1;
  return r;
}

std::vector<ScoredCase> scored(const LabelMap& gold, const PredictionSet& preds) { return align(gold, preds); }

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_of(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

template <std::size_t N>
nlohmann::json opt_array(const std::array<std::optional<double>, N>& a) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& v : a) j.push_back(opt(v));
  return j;
}

}  // namespace

ConsensusReport consensus_report(const LabelMap& gold, const std::vector<ConsensusDecision>& decisions) {
  auto v = views_of(gold, decisions);
  return report_of(v);
}

double full_cohort_accuracy(const LabelMap& gold, const PredictionSet& preds) {
  auto cases = align(gold, preds);
  if (cases.empty()) throw EvaluationError("no cases");
  std::size_t correct = 0;
  for (const auto& c : cases)
    if (c.predicted && *c.predicted == c.gold) ++correct;
  return static_cast<double>(correct) / static_cast<double>(cases.size());
}

std::vector<PairRow> pair_sweep(const std::vector<std::pair<const PredictionSet*, const PredictionSet*>>& pairs,
                                const LabelMap& gold, const BootstrapOptions& options) {
  std::vector<PairRow> rows;
  for (const auto& [a, b] : pairs) {
    if (a->split_digest != b->split_digest)
      throw EvaluationError(fmt::format("{} and {} were produced on different splits", a->config_name(),
                                        b->config_name()));
    PairRow row;
    row.model_a = a->config_name();
    row.model_b = b->config_name();
    auto decisions = decide_consensus(*a, *b);
    auto views = views_of(gold, decisions);
    row.report = report_of(views);

    auto sa = scored(gold, *a), sb = scored(gold, *b);
    auto fa = compute_metric(Metric::MacroF1, sa), fb = compute_metric(Metric::MacroF1, sb);
    bool pick_b = fb && (!fa || *fb > *fa);
    const auto& best = pick_b ? sb : sa;
    row.best_single = pick_b ? row.model_b : row.model_a;
    row.best_single_macro_f1 = (pick_b ? fb : fa).value_or(0.0);

    // best and views are both ordered by id, so indices line up.
    auto attach = [&](const std::string& key, auto&& fn) {
      ResampleStatistic stat = [&views, fn](std::span<const std::size_t> idx) -> std::optional<double> {
        thread_local std::vector<CaseView> sample;
        sample.clear();
        for (auto i : idx) sample.push_back(views[i]);
        return fn(report_of(sample));
      };
      try {
        row.intervals[key] = bootstrap_ci(views.size(), stat, options);
      } catch (const EvaluationError&) {
      }
    };
    attach("escalation_rate", [](const ConsensusReport& r) -> std::optional<double> { return r.escalation_rate; });
    attach("consensus_accuracy", [](const ConsensusReport& r) { return r.consensus_accuracy; });
    attach("consensus_macro_f1", [](const ConsensusReport& r) { return r.consensus_macro_f1; });
    attach("oracle_hitl_macro_f1",
           [](const ConsensusReport& r) -> std::optional<double> { return r.oracle_hitl_macro_f1; });
    attach("oracle_hitl_accuracy",
           [](const ConsensusReport& r) -> std::optional<double> { return r.oracle_hitl_accuracy; });
    ResampleStatistic best_stat = [&best](std::span<const std::size_t> idx) {
      thread_local std::vector<ScoredCase> sample;
      sample.clear();
      for (auto i : idx) sample.push_back(best[i]);
      return compute_metric(Metric::MacroF1, sample);
    };
    try {
      row.intervals["best_single_macro_f1"] = bootstrap_ci(best.size(), best_stat, options);
    } catch (const EvaluationError&) {
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json to_json(const ConsensusReport& r) {
  return {{"n", r.n},
          {"accepted", r.accepted},
          {"escalated", r.escalated},
          {"invalid_escalations", r.invalid_escalations},
          {"escalation_rate", r.escalation_rate},
          {"invalid_escalation_rate", r.invalid_escalation_rate},
          {"consensus_accuracy", opt(r.consensus_accuracy)},
          {"consensus_macro_f1", opt(r.consensus_macro_f1)},
          {"oracle_hitl_macro_f1", r.oracle_hitl_macro_f1},
          {"oracle_hitl_accuracy", r.oracle_hitl_accuracy},
          {"consensus_accuracy_by_prediction", opt_array(r.consensus_accuracy_by_prediction)},
          {"consensus_accuracy_by_gold", opt_array(r.consensus_accuracy_by_gold)},
          {"accepted_by_prediction", r.accepted_by_prediction},
          {"oracle_hitl_f1", r.oracle_hitl_f1}};
}

nlohmann::json to_json(const PairRow& row) {
  nlohmann::json intervals = nlohmann::json::object();
  for (const auto& [k, ci] : row.intervals) intervals[k] = to_json(ci);
  return {{"model_a", row.model_a},
          {"model_b", row.model_b},
          {"best_single", row.best_single},
          {"best_single_macro_f1", row.best_single_macro_f1},
          {"report", to_json(row.report)},
          {"intervals", std::move(intervals)}};
}

PairRow pair_row_from_json(const nlohmann::json& j) {
  PairRow row;
  row.model_a = j.at("model_a").get<std::string>();
  row.model_b = j.at("model_b").get<std::string>();
  row.best_single = j.at("best_single").get<std::string>();
  row.best_single_macro_f1 = j.at("best_single_macro_f1").get<double>();
  const auto& r = j.at("report");
  auto& rep = row.report;
  rep.n = r.at("n").get<std::size_t>();
  rep.accepted = r.at("accepted").get<std::size_t>();
  rep.escalated = r.at("escalated").get<std::size_t>();
  rep.invalid_escalations = r.at("invalid_escalations").get<std::size_t>();
  rep.escalation_rate = r.at("escalation_rate").get<double>();
  rep.invalid_escalation_rate = r.at("invalid_escalation_rate").get<double>();
  rep.consensus_accuracy = opt_of(r.at("consensus_accuracy"));
  rep.consensus_macro_f1 = opt_of(r.at("consensus_macro_f1"));
  rep.oracle_hitl_macro_f1 = r.at("oracle_hitl_macro_f1").get<double>();
  rep.oracle_hitl_accuracy = r.at("oracle_hitl_accuracy").get<double>();
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    rep.consensus_accuracy_by_prediction[k] = opt_of(r.at("consensus_accuracy_by_prediction").at(k));
    rep.consensus_accuracy_by_gold[k] = opt_of(r.at("consensus_accuracy_by_gold").at(k));
  }
  rep.accepted_by_prediction = r.at("accepted_by_prediction").get<std::array<std::size_t, kNumLabels>>();
  rep.oracle_hitl_f1 = r.at("oracle_hitl_f1").get<std::array<double, kNumLabels>>();
  for (const auto& [k, cj] : j.at("intervals").items()) row.intervals[k] = bootstrap_ci_from_json(cj);
  return row;
}

}  // namespace triage
