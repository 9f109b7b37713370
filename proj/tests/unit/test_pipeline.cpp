#include <doctest.h>

#include <sstream>

#include "triage/io.hpp"
#include "triage/pipeline.hpp"
#include "triage/predictions.hpp"
#include "../support/fixtures.hpp"
#include "../support/smoke.hpp"
#include "../support/tempdir.hpp"

using namespace triage;
namespace fs = std::filesystem;

namespace {

RunOptions stub_options() {
  RunOptions o;
  o.backend_factory = testsupport::stub_factory();
  return o;
}

std::vector<RecordId> read_ids(const fs::path& p) {
  std::vector<RecordId> ids;
  std::istringstream in(read_file(p));
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ids.push_back(std::stoll(line));
  return ids;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config parsing, overrides and defaults") {
    testsupport::TempDir dir("cfg");
    auto path = testsupport::write_smoke_workspace(dir.path());
    auto cfg = load_experiment_config(path, {"evaluation.replicates=50", "models.1.shots=[0]", "sampling.seed=7"});
    CHECK(cfg.bootstrap.replicates == 50);
    CHECK(cfg.sampling.seed == 7);
    CHECK(cfg.models.at(1).shots == std::vector<int>{0});
    CHECK(cfg.corpus_path == dir.path() / "corpus.jsonl");
    CHECK(cfg.output_dir == dir.path() / "run");
    CHECK(cfg.baseline.folds == 3);
    auto planned = cfg.planned_configs();
    CHECK(planned == std::vector<std::string>{"tfidf-lr-default@baseline", "tfidf-lr-balanced@baseline", "alpha@0-shot",
                                              "alpha@4-shot", "beta@0-shot"});
    auto again = ExperimentConfig::from_json(cfg.to_json(), "/");
    CHECK(again.digest() == cfg.digest());
    auto other = load_experiment_config(path);
    CHECK(other.digest() != cfg.digest());

    nlohmann::json j = {{"a", {{"b", 1}}}, {"list", {1, 2}}};
    apply_override(j, "a.b=2.5");
    apply_override(j, "a.c=hello");
    apply_override(j, "list.1=9");
    CHECK(j["a"]["b"] == 2.5);
    CHECK(j["a"]["c"] == "hello");
    CHECK(j["list"][1] == 9);
    CHECK_THROWS(apply_override(j, "noequals"));
  }

  TEST_CASE("config errors") {
    testsupport::TempDir dir("cfg");
    auto base = testsupport::smoke_config_json();
    auto bad = base;
    bad["sampling"]["colour"] = 1;
    testsupport::write_smoke_workspace(dir.path(), bad);
    CHECK_THROWS_WITH_AS(load_experiment_config(dir / "config.json"), doctest::Contains("colour"), InputError);

    bad = base;
    bad["sampling"]["silver"] = 30;
    testsupport::write_smoke_workspace(dir.path(), bad);
    CHECK_THROWS(load_experiment_config(dir / "config.json"));

    bad = base;
    bad["models"][1]["name"] = "alpha";
    testsupport::write_smoke_workspace(dir.path(), bad);
    CHECK_THROWS(load_experiment_config(dir / "config.json"));

    bad = base;
    bad["models"][0]["shots"] = {0, 5};
    testsupport::write_smoke_workspace(dir.path(), bad);
    CHECK_THROWS(load_experiment_config(dir / "config.json"));

    bad = base;
    bad["consensus"]["pairs"] = nlohmann::json::array({nlohmann::json::array({"alpha@0-shot", "nobody@0-shot"})});
    testsupport::write_smoke_workspace(dir.path(), bad);
    CHECK_THROWS_WITH(load_experiment_config(dir / "config.json"), doctest::Contains("nobody@0-shot"));
  }

  TEST_CASE("missing external file fails before any stage runs") {
    testsupport::TempDir dir("cfg");
    auto j = testsupport::smoke_config_json();
    j["externals"] = {{{"name", "biobert"}, {"path", "missing.csv"}}};
    testsupport::write_smoke_workspace(dir.path(), j);
    CHECK_THROWS_WITH(load_experiment_config(dir / "config.json"), doctest::Contains("missing.csv"));
    CHECK_FALSE(fs::exists(dir / "run" / "manifest.json"));
  }

  TEST_CASE("smoke run is complete, reusable and replayable") {
    testsupport::TempDir dir("smoke");
    auto path = testsupport::write_smoke_workspace(dir.path());
    auto cfg = load_experiment_config(path);
    auto m1 = run_experiment(cfg, stub_options());
    REQUIRE(m1.failed_stage.empty());
    CHECK(m1.stages.size() == kAllStages.size());
    for (const auto& s : m1.stages) CHECK_FALSE(s.reused);

    const auto run = dir / "run";
    CHECK(read_ids(run / "split" / "silver_ids.txt").size() == 24);
    CHECK(read_ids(run / "split" / "gold_ids.txt").size() == 16);
    CHECK(read_ids(run / "split" / "fewshot_ids.txt").size() == 16);
    for (const auto& name : {"tfidf-lr-default@baseline", "tfidf-lr-balanced@baseline", "alpha@0-shot", "alpha@4-shot",
                             "beta@0-shot", "beta@4-shot"}) {
      CAPTURE(name);
      CHECK(fs::exists(run / "predictions" / (std::string(name) + ".json")));
      CHECK(fs::exists(run / "evaluation" / (std::string(name) + ".json")));
    }
    for (const auto& t : {"model_performance", "safety_metrics", "prompt_sensitivity", "model_pairs",
                          "consensus_per_class", "mcnemar", "agreement"}) {
      CAPTURE(t);
      CHECK(fs::exists(run / "report" / (std::string(t) + ".csv")));
      CHECK(fs::exists(run / "report" / (std::string(t) + ".md")));
    }
    CHECK(fs::exists(run / "report" / "tradeoff.svg"));
    CHECK(fs::exists(run / "report" / "report.md"));
    auto training = nlohmann::json::parse(read_file(run / "baseline" / "balanced" / "training.json"));
    CHECK(training.at("cross_validation").contains("winner"));

    auto before = testsupport::tree_digest(run);
    auto m2 = run_experiment(cfg, stub_options());
    for (const auto& s : m2.stages) CHECK(s.reused);
    auto after = testsupport::tree_digest(run);
    after.erase("manifest.json");
    before.erase("manifest.json");
    CHECK(after == before);

    testsupport::TempDir dir2("smoke");
    auto path2 = testsupport::write_smoke_workspace(dir2.path());
    auto m3 = run_experiment(load_experiment_config(path2), stub_options());
    auto fresh = testsupport::tree_digest(dir2 / "run");
    fresh.erase("manifest.json");
    CHECK(fresh == before);
    CHECK(m3.seeds == m1.seeds);
  }

  TEST_CASE("a changed seed reruns downstream stages only") {
    testsupport::TempDir dir("smoke");
    auto path = testsupport::write_smoke_workspace(dir.path());
    run_experiment(load_experiment_config(path), stub_options());
    auto m = run_experiment(load_experiment_config(path, {"evaluation.seed=9"}), stub_options());
    CHECK(m.find("filter")->reused);
    CHECK(m.find("classify")->reused);
    CHECK_FALSE(m.find("evaluate")->reused);
    auto forced = stub_options();
    forced.force = true;
    auto f = run_experiment(load_experiment_config(path, {"evaluation.seed=9"}), forced);
    CHECK_FALSE(f.find("filter")->reused);
  }

  TEST_CASE("without labels the run stops after the split") {
    testsupport::TempDir dir("smoke");
    auto j = testsupport::smoke_config_json();
    j.erase("labels");
    auto path = testsupport::write_smoke_workspace(dir.path(), j);
    auto m = run_experiment(load_experiment_config(path), stub_options());
    CHECK(m.stages.size() == 3);
    CHECK(m.stages.back().name == "split");
    auto target = stub_options();
    target.target = Stage::Evaluate;
    CHECK_THROWS_AS(run_experiment(load_experiment_config(path), target), PipelineError);
  }

  TEST_CASE("external predictions are ingested on the gold split") {
    testsupport::TempDir dir("smoke");
    auto j = testsupport::smoke_config_json();
    j["models"] = nlohmann::json::array();
    j["baseline"]["enabled"] = false;
    auto path = testsupport::write_smoke_workspace(dir.path(), j);
    auto split = stub_options();
    split.target = Stage::Split;
    run_experiment(load_experiment_config(path), split);
    auto gold = read_ids(dir / "run" / "split" / "gold_ids.txt");
    std::string csv = "id,label\n";
    for (auto id : gold) csv += std::to_string(id) + ",schedule-visit\n";
    write_file_atomic(dir / "ext.csv", csv);
    j["externals"] = {{{"name", "bert"}, {"path", "ext.csv"}}};
    testsupport::write_smoke_workspace(dir.path(), j);
    auto m = run_experiment(load_experiment_config(path), stub_options());
    CHECK(m.failed_stage.empty());
    auto set = load_prediction_set(dir / "run" / "predictions" / "bert@external.json");
    CHECK(set.entries.size() == 16);
    auto eval = nlohmann::json::parse(read_file(dir / "run" / "evaluation" / "bert@external.json"));
    CHECK(eval["n_total"] == 16);
  }

  TEST_CASE("a failing stage is recorded in the manifest") {
    testsupport::TempDir dir("smoke");
    auto path = testsupport::write_smoke_workspace(dir.path());
    auto cfg = load_experiment_config(path);
    RunOptions o;
    o.backend_factory = [](const ModelSpec&) -> std::unique_ptr<Backend> { throw std::runtime_error("no backend today"); };
    try {
      run_experiment(cfg, o);
      FAIL("expected a failure");
    } catch (const PipelineError& e) {
      CHECK(e.stage() == "classify");
    }
    auto m = RunManifest::from_json(nlohmann::json::parse(read_file(dir / "run" / "manifest.json")));
    CHECK(m.failed_stage == "classify");
    CHECK(m.error.find("no backend today") != std::string::npos);
    CHECK(m.find("train") != nullptr);
  }

  TEST_CASE("compare two prediction sets") {
    auto gold = testsupport::gold_map(std::vector<int>(20, 0));
    std::vector<int> pa(20, 0), pb(20, 0);
    for (int i = 0; i < 10; ++i) pb[i] = 1;   // b wrong, a right
    for (int i = 10; i < 12; ++i) pa[i] = 1;  // a wrong, b right
    auto a = testsupport::pred_set(pa, "a"), b = testsupport::pred_set(pb, "b");
    auto r = compare_runs(gold, a, b);
    CHECK(r.mcnemar.b == 10);
    CHECK(r.mcnemar.c == 2);
    CHECK(r.mcnemar.p_value == doctest::Approx(0.0386).epsilon(0.001));
    CHECK(r.deltas.at("accuracy") == doctest::Approx(-0.4));
    auto same = compare_runs(gold, a, a);
    CHECK(same.mcnemar.p_value == 1.0);
    for (const auto& [k, v] : same.deltas)
      if (v) CHECK(*v == 0.0);
    auto moved = b;
    moved.split_digest = "x";
    CHECK_THROWS(compare_runs(gold, a, moved));
    CHECK(to_json(r).contains("deltas_b_minus_a"));
  }
}
