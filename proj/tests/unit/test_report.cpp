#include <doctest.h>

#include "triage/report.hpp"
#include "../support/fixtures.hpp"

using namespace triage;
using testsupport::gold_map;
using testsupport::pred_set;

namespace {

std::size_t count_of(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

std::vector<ModelEvaluation> three_configs() {
  auto gold = gold_map({0, 1, 2, 3, 0, 1, 2, 3});
  BootstrapOptions opt;
  opt.replicates = 20;
  return {evaluate_model(gold, pred_set({0, 1, 2, 3, 0, 1, 2, 3}, "zeta", "4-shot"), opt),
          evaluate_model(gold, pred_set({1, 1, 2, 3, 3, 1, 2, -1}, "alpha", "12-shot"), opt),
          evaluate_model(gold, pred_set({3, 3, 3, 3, 3, 3, 3, 3}, "alpha", "0-shot"), opt)};
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("number formatting") {
    CHECK(format_number(std::nullopt) == "NA");
    CHECK(format_number(0.5) == "0.5000");
    CHECK(format_number(-0.0) == "0.0000");
    CHECK(format_number(-0.00001) == "0.0000");
    CHECK(format_number(2.0 / 3.0, 2) == "0.67");
  }

  TEST_CASE("tables have one row per configuration in report order") {
    auto evals = three_configs();
    auto perf = performance_table(evals);
    REQUIRE(perf.rows.size() == 3);
    CHECK(perf.rows[0][0] == "alpha@0-shot");
    CHECK(perf.rows[1][0] == "alpha@12-shot");
    CHECK(perf.rows[2][0] == "zeta@4-shot");
    CHECK(perf.rows[2][6] == "1.0000");
    CHECK(perf.rows[1][5] == "12.50");
    for (const auto& r : perf.rows) CHECK(r.size() == perf.headers.size());
    auto safety = safety_table(evals);
    CHECK(safety.rows.size() == 3);
    CHECK(safety.rows[0].size() == safety.headers.size());
  }

  TEST_CASE("tradeoff figure has one point per configuration") {
    auto svg = tradeoff_svg(three_configs());
    CHECK(svg.starts_with("<svg"));
    CHECK(count_of(svg, "<g class=\"point\">") == 3);
    CHECK(svg.find("zeta@4-shot") != std::string::npos);
    CHECK(svg.find("Macro-F1") != std::string::npos);
  }

  TEST_CASE("prompt sensitivity groups by model and averages per setting") {
    auto evals = three_configs();
    auto t = prompt_sensitivity_table(evals);
    REQUIRE(t.rows.size() == 6);
    CHECK(t.rows[0][0] == "alpha");
    CHECK(t.rows[0][1] == "0-shot");
    CHECK(t.rows[1][1] == "12-shot");
    CHECK(t.rows[2][0] == "zeta");
    CHECK(t.rows[3][0] == "mean");
    CHECK(t.rows[3][1] == "0-shot");
    CHECK(t.rows[4][1] == "4-shot");
    CHECK(t.rows[5][1] == "12-shot");
    CHECK(t.rows[4][2] == "1.0000");
  }

  TEST_CASE("csv and markdown escaping") {
    Table t;
    t.title = "T";
    t.headers = {"a", "b"};
    t.rows = {{"x,y", "he said \"hi\""}, {"p|q", "plain"}};
    CHECK(t.to_csv() == "a,b\n\"x,y\",\"he said \"\"hi\"\"\"\np|q,plain\n");
    auto md = t.to_markdown();
    CHECK(md.find("### T") == 0);
    CHECK(md.find("p\\|q") != std::string::npos);
    CHECK(md.find("| --- | --- |") != std::string::npos);
  }

  TEST_CASE("pair and mcnemar tables") {
    auto gold = gold_map({0, 1, 2, 3});
    BootstrapOptions opt;
    opt.replicates = 10;
    auto a = pred_set({1, 2, 3, 0}, "a");
    auto b = pred_set({2, 3, 0, 1}, "b");
    auto rows = pair_sweep({{&a, &b}}, gold, opt);
    auto pt = pairs_table(rows);
    REQUIRE(pt.rows.size() == 1);
    CHECK(pt.rows[0][6] == "100.00");
    CHECK(pt.rows[0][10] == "NA");
    CHECK(consensus_per_class_table(rows).rows.size() == 4);
    McNemarRow m{"a@0-shot", "b@0-shot", mcnemar_test(gold, a, b)};
    auto back = mcnemar_row_from_json(to_json(m));
    CHECK(mcnemar_table({back}).rows[0] == mcnemar_table({m}).rows[0]);
    AgreementRow ag{"gold", 0, 0, 0, {}};
    CHECK(agreement_table({ag}).rows[0][3] == "NA");
  }
}
