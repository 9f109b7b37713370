#include "triage/report.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "triage/io.hpp"

namespace triage {

std::string Table::to_csv() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(fields[i]);
    }
    out += '\n';
  };
  line(headers);
  for (const auto& r : rows) line(r);
  return out;
}

std::string Table::to_markdown() const {
  auto cell = [](std::string s) {
    std::string o;
    for (char c : s) {
      if (c == '|') o += "\\|";
      else if (c == '\n') o += ' ';
      else o += c;
    }
    return o;
  };
  std::string out;
  if (!title.empty()) out += fmt::format("### {}\n\n", title);
  out += "|";
  for (const auto& h : headers) out += " " + cell(h) + " |";
  out += "\n|";
  for (std::size_t i = 0; i < headers.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& r : rows) {
    out += "|";
    for (const auto& f : r) out += " " + cell(f) + " |";
    out += "\n";
  }
  return out;
}

std::string format_number(std::optional<double> v, int decimals) {
  if (!v) return "NA";
  double x = *v;
  if (x == 0.0) x = 0.0;  // no "-0.0000"
  auto s = fmt::format("{:.{}f}", x, decimals);
  if (s.starts_with('-') && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

nlohmann::json to_json(const McNemarRow& row) {
  return {{"config_a", row.config_a}, {"config_b", row.config_b}, {"result", to_json(row.result)}};
}

McNemarRow mcnemar_row_from_json(const nlohmann::json& j) {
  McNemarRow r;
  r.config_a = j.at("config_a").get<std::string>();
  r.config_b = j.at("config_b").get<std::string>();
  const auto& m = j.at("result");
  r.result.b = m.at("b").get<std::size_t>();
  r.result.c = m.at("c").get<std::size_t>();
  r.result.n = m.at("n").get<std::size_t>();
  r.result.statistic = m.at("statistic").get<double>();
  r.result.p_value = m.at("p_value").get<double>();
  r.result.method = m.at("method") == "exact-binomial" ? McNemarMethod::ExactBinomial : McNemarMethod::ContinuityCorrected;
  return r;
}

nlohmann::json to_json(const AgreementRow& row) {
  return {{"split", row.split},
          {"n", row.n},
          {"retained", row.retained},
          {"revised", row.revised},
          {"kappa", row.kappa.kappa ? nlohmann::json(*row.kappa.kappa) : nlohmann::json(nullptr)},
          {"observed_agreement", row.kappa.observed_agreement},
          {"expected_agreement", row.kappa.expected_agreement},
          {"note", row.kappa.note}};
}

AgreementRow agreement_row_from_json(const nlohmann::json& j) {
  AgreementRow r;
  r.split = j.at("split").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.retained = j.at("retained").get<std::size_t>();
  r.revised = j.at("revised").get<std::size_t>();
  if (!j.at("kappa").is_null()) r.kappa.kappa = j.at("kappa").get<double>();
  r.kappa.observed_agreement = j.at("observed_agreement").get<double>();
  r.kappa.expected_agreement = j.at("expected_agreement").get<double>();
  r.kappa.n = r.n;
  r.kappa.note = j.value("note", "");
  return r;
}

namespace {

int setting_rank(const std::string& s) {
  if (s == "0-shot") return 0;
  if (s == "4-shot") return 1;
  if (s == "12-shot") return 2;
  return 3;
}

std::vector<const ModelEvaluation*> ordered(const std::vector<ModelEvaluation>& evals) {
  std::vector<const ModelEvaluation*> v;
  for (const auto& e : evals) v.push_back(&e);
  std::sort(v.begin(), v.end(), [](auto* a, auto* b) { return report_order(*a, *b); });
  return v;
}

std::array<std::string, 2> bounds(const ModelEvaluation& e, Metric m) {
  auto it = e.intervals.find(m);
  if (it == e.intervals.end() || !it->second.point) return {"NA", "NA"};
  return {format_number(it->second.lo), format_number(it->second.hi)};
}

std::string pct(std::optional<double> v) { return v ? format_number(*v * 100.0, 2) : "NA"; }

std::array<std::string, 2> pair_bounds(const PairRow& r, const std::string& key, bool as_pct) {
  auto it = r.intervals.find(key);
  if (it == r.intervals.end() || !it->second.point) return {"NA", "NA"};
  if (as_pct) return {pct(it->second.lo), pct(it->second.hi)};
  return {format_number(it->second.lo), format_number(it->second.hi)};
}

std::string xml_escape(std::string_view s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace

bool report_order(const ModelEvaluation& a, const ModelEvaluation& b) {
  if (a.model_name != b.model_name) return a.model_name < b.model_name;
  int ra = setting_rank(a.setting), rb = setting_rank(b.setting);
  if (ra != rb) return ra < rb;
  return a.setting < b.setting;
}

Table performance_table(const std::vector<ModelEvaluation>& evals) {
  Table t;
  t.title = "Model performance";
  t.headers = {"config", "model", "setting", "n", "valid_n", "parse_fail_pct", "macro_f1", "macro_f1_lo",
               "macro_f1_hi", "accuracy", "accuracy_lo", "accuracy_hi"};
  for (auto l : kAllLabels) t.headers.push_back(fmt::format("f1_{}", to_string(l)));
  for (const auto* e : ordered(evals)) {
    auto f = bounds(*e, Metric::MacroF1), a = bounds(*e, Metric::Accuracy);
    std::vector<std::string> row = {e->config_name,
                                    e->model_name,
                                    e->setting,
                                    std::to_string(e->n_total),
                                    std::to_string(e->valid_n),
                                    pct(e->parse_fail_rate),
                                    format_number(e->classification.macro_f1),
                                    f[0],
                                    f[1],
                                    format_number(e->classification.accuracy),
                                    a[0],
                                    a[1]};
    for (std::size_t k = 0; k < kNumLabels; ++k) row.push_back(format_number(e->classification.f1[k]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table safety_table(const std::vector<ModelEvaluation>& evals) {
  Table t;
  t.title = "Safety metrics";
  t.headers = {"config"};
  const std::array<std::pair<Metric, const char*>, 5> cols = {{{Metric::UnderTriage, "under_triage"},
                                                               {Metric::SevereUnderTriage, "severe_under_triage"},
                                                               {Metric::OverTriage, "over_triage"},
                                                               {Metric::UrgentOrHigherRecall, "urgent_or_higher_recall"},
                                                               {Metric::EmergencyRecall, "emergency_recall"}}};
  for (const auto& [m, name] : cols) {
    t.headers.push_back(name);
    t.headers.push_back(fmt::format("{}_lo", name));
    t.headers.push_back(fmt::format("{}_hi", name));
  }
  t.headers.push_back("emergency_false_negatives");
  for (const auto* e : ordered(evals)) {
    const auto& s = e->safety;
    const std::array<std::optional<double>, 5> vals = {s.under_triage_rate, s.severe_under_triage_rate,
                                                       s.over_triage_rate, s.urgent_or_higher_recall,
                                                       s.emergency_recall};
    std::vector<std::string> row = {e->config_name};
    for (std::size_t i = 0; i < cols.size(); ++i) {
      auto b = bounds(*e, cols[i].first);
      row.push_back(format_number(vals[i]));
      row.push_back(b[0]);
      row.push_back(b[1]);
    }
    row.push_back(std::to_string(s.emergency_false_negatives));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table prompt_sensitivity_table(const std::vector<ModelEvaluation>& evals) {
  Table t;
  t.title = "Prompt sensitivity";
  t.headers = {"model", "setting", "macro_f1", "macro_f1_lo", "macro_f1_hi", "accuracy", "parse_fail_pct"};
  std::map<int, std::array<double, 4>> sums;  // rank -> {macro, accuracy, parse, count}
  for (const auto* e : ordered(evals)) {
    int r = setting_rank(e->setting);
    if (r > 2) continue;
    auto f = bounds(*e, Metric::MacroF1);
    t.rows.push_back({e->model_name, e->setting, format_number(e->classification.macro_f1), f[0], f[1],
                      format_number(e->classification.accuracy), pct(e->parse_fail_rate)});
    auto& acc = sums[r];
    acc[0] += e->classification.macro_f1;
    acc[1] += e->classification.accuracy;
    acc[2] += e->parse_fail_rate;
    acc[3] += 1.0;
  }
  const std::array<const char*, 3> names = {"0-shot", "4-shot", "12-shot"};
  for (const auto& [r, acc] : sums) {
    t.rows.push_back({"mean", names[static_cast<std::size_t>(r)], format_number(acc[0] / acc[3]), "NA", "NA",
                      format_number(acc[1] / acc[3]), pct(acc[2] / acc[3])});
  }
  return t;
}

Table pairs_table(const std::vector<PairRow>& rows) {
  Table t;
  t.title = "Model pairs";
  t.headers = {"model_a",
               "model_b",
               "best_single",
               "best_single_macro_f1",
               "best_single_macro_f1_lo",
               "best_single_macro_f1_hi",
               "escalation_pct",
               "escalation_pct_lo",
               "escalation_pct_hi",
               "invalid_escalation_pct",
               "consensus_accuracy_pct",
               "consensus_accuracy_pct_lo",
               "consensus_accuracy_pct_hi",
               "consensus_macro_f1",
               "consensus_macro_f1_lo",
               "consensus_macro_f1_hi",
               "oracle_hitl_macro_f1",
               "oracle_hitl_macro_f1_lo",
               "oracle_hitl_macro_f1_hi",
               "oracle_hitl_accuracy"};
  for (const auto& r : rows) {
    auto bs = pair_bounds(r, "best_single_macro_f1", false);
    auto es = pair_bounds(r, "escalation_rate", true);
    auto ca = pair_bounds(r, "consensus_accuracy", true);
    auto cf = pair_bounds(r, "consensus_macro_f1", false);
    auto of = pair_bounds(r, "oracle_hitl_macro_f1", false);
    t.rows.push_back({r.model_a, r.model_b, r.best_single, format_number(r.best_single_macro_f1), bs[0], bs[1],
                      pct(r.report.escalation_rate), es[0], es[1], pct(r.report.invalid_escalation_rate),
                      pct(r.report.consensus_accuracy), ca[0], ca[1], format_number(r.report.consensus_macro_f1),
                      cf[0], cf[1], format_number(r.report.oracle_hitl_macro_f1), of[0], of[1],
                      format_number(r.report.oracle_hitl_accuracy)});
  }
  return t;
}

Table consensus_per_class_table(const std::vector<PairRow>& rows) {
  Table t;
  t.title = "Consensus per class";
  t.headers = {"model_a",
               "model_b",
               "class",
               "accepted_n",
               "consensus_accuracy",
               "consensus_accuracy_gold_conditioned",
               "oracle_hitl_f1"};
  for (const auto& r : rows) {
    for (auto l : kAllLabels) {
      auto k = index_of(l);
      t.rows.push_back({r.model_a, r.model_b, std::string(to_string(l)),
                        std::to_string(r.report.accepted_by_prediction[k]),
                        format_number(r.report.consensus_accuracy_by_prediction[k]),
                        format_number(r.report.consensus_accuracy_by_gold[k]),
                        format_number(r.report.oracle_hitl_f1[k])});
    }
  }
  return t;
}

Table mcnemar_table(const std::vector<McNemarRow>& rows) {
  Table t;
  t.title = "Pairwise McNemar tests";
  t.headers = {"model_a", "model_b", "b", "c", "n", "statistic", "p_value", "method"};
  for (const auto& r : rows) {
    t.rows.push_back({r.config_a, r.config_b, std::to_string(r.result.b), std::to_string(r.result.c),
                      std::to_string(r.result.n), format_number(r.result.statistic), format_number(r.result.p_value, 6),
                      std::string(to_string(r.result.method))});
  }
  return t;
}

Table agreement_table(const std::vector<AgreementRow>& rows) {
  Table t;
  t.title = "Initial versus reference labels";
  t.headers = {"split", "n", "retained", "retained_pct", "revised", "revised_pct", "kappa", "note"};
  for (const auto& r : rows) {
    const double n = static_cast<double>(r.n);
    t.rows.push_back({r.split, std::to_string(r.n), std::to_string(r.retained),
                      r.n ? pct(static_cast<double>(r.retained) / n) : "NA", std::to_string(r.revised),
                      r.n ? pct(static_cast<double>(r.revised) / n) : "NA", format_number(r.kappa.kappa), r.kappa.note});
  }
  return t;
}

std::string tradeoff_svg(const std::vector<ModelEvaluation>& evals) {
  constexpr double W = 640, H = 520, L = 70, R = 30, T = 30, B = 60;
  constexpr double pw = W - L - R, ph = H - T - B;
  auto px = [](double x) { return L + x * pw; };
  auto py = [](double y) { return T + y * ph; };
  std::string s;
  s += fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{:.0f}" height="{:.0f}" viewBox="0 0 {:.0f} {:.0f}" font-family="sans-serif" font-size="11">)",
                   W, H, W, H);
  s += "\n";
  s += fmt::format(R"(<rect x="0" y="0" width="{:.0f}" height="{:.0f}" fill="white"/>)", W, H) + "\n";
  s += fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="#e8f5e9"/>)", px(0.5), py(0.0),
                   pw / 2, ph / 2) +
       "\n";
  s += fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="end" fill="#2e7d32">favorable</text>)", px(1.0) - 6,
                   py(0.0) + 14) +
       "\n";
  for (int i = 0; i <= 5; ++i) {
    double v = i / 5.0;
    s += fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#dddddd"/>)", px(v), py(0), px(v),
                     py(1)) +
         "\n";
    s += fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="#dddddd"/>)", px(0), py(v), px(1),
                     py(v)) +
         "\n";
    s += fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="middle">{:.1f}</text>)", px(v), py(1) + 16, v) + "\n";
    s += fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="end">{:.1f}</text>)", px(0) - 6, py(v) + 4, v) + "\n";
  }
  s += fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="none" stroke="black"/>)", px(0),
                   py(0), pw, ph) +
       "\n";
  s += fmt::format(R"(<text x="{:.2f}" y="{:.2f}" text-anchor="middle">Macro-F1</text>)", px(0.5), H - 20) + "\n";
  s += fmt::format(R"svg(<text x="18" y="{:.2f}" text-anchor="middle" transform="rotate(-90 18 {:.2f})">Under-triage rate</text>)svg",
                   py(0.5), py(0.5)) +
       "\n";
  for (const auto* e : ordered(evals)) {
    double x = std::clamp(e->classification.macro_f1, 0.0, 1.0);
    double y = std::clamp(e->safety.under_triage_rate, 0.0, 1.0);
    s += fmt::format(R"(<g class="point"><circle cx="{:.2f}" cy="{:.2f}" r="4" fill="#1565c0"/>)", px(x), py(y));
    s += fmt::format(R"(<text x="{:.2f}" y="{:.2f}">{}</text></g>)", px(x) + 6, py(y) - 6, xml_escape(e->config_name));
    s += "\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace triage
