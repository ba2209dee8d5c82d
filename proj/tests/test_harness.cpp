#include <doctest.h>

#include <filesystem>

#include "cqd/errors.hpp"
#include "cqd/harness.hpp"
#include "cqd/io.hpp"

using namespace cqd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cqd_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

RunResult result(Method m, std::uint64_t seed, double acc, double acc_lq) {
  RunResult r;
  r.method = m;
  r.seed = seed;
  r.ok = true;
  r.accuracy = acc;
  r.accuracy_hq = acc;
  r.accuracy_lq = acc_lq;
  return r;
}

}  // namespace

TEST_CASE("experiment config json") {
  ExperimentConfig c = experiment_preset("localize");
  c.seeds = {3, 9};
  c.tau.enabled = true;
  c.tau.split = "train";
  const nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.transform.kind == TransformKind::Localize);
  CHECK(back.pretrain.enabled == c.pretrain.enabled);

  nlohmann::json bad = j;
  bad["colour"] = "blue";
  CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);

  ExperimentConfig v = c;
  v.seeds.clear();
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = c;
  v.tau.split = "val";
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = c;
  v.pretrain.enabled = true;
  v.pretrain.shapes.side = 32;
  CHECK_THROWS_AS(v.validate(), ConfigError);

  const fs::path dir = scratch_dir("config");
  fs::create_directories(dir);
  write_file_atomic(dir / "broken.json", "{ \"name\": ");
  CHECK_THROWS_AS(load_experiment_config(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "absent.json"), ConfigError);
  write_json_atomic(dir / "ok.json", j);
  CHECK(nlohmann::json(load_experiment_config(dir / "ok.json")) == j);
}

TEST_CASE("presets") {
  for (const auto& name : experiment_presets()) {
    const ExperimentConfig c = experiment_preset(name);
    CHECK(c.name == name);
    CHECK_NOTHROW(c.validate());
  }
  CHECK(experiment_preset("compress").train.teacher_arch != experiment_preset("compress").train.student_arch);
  CHECK(experiment_preset("compress_shallow").train.teacher_arch == experiment_preset("compress_shallow").train.student_arch);
  CHECK(experiment_preset("compress_shallow").train.init_from_teacher == experiment_preset("compress").train.init_from_teacher);
  CHECK_THROWS_AS(experiment_preset("nope"), ConfigError);
}

TEST_CASE("run configs") {
  ExperimentConfig c = experiment_preset("compress");
  CHECK(run_config(c, Method::TrainA, 4).student_arch == c.train.teacher_arch);
  CHECK(run_config(c, Method::CQD, 4).student_arch == c.train.student_arch);
  CHECK(run_config(c, Method::CQD, 4).seed == 4);
}

TEST_CASE("seed data") {
  ExperimentConfig c = experiment_preset("smoke");
  const SeedData a = build_seed_data(c, 0);
  CHECK(a.train.size() == 48);
  CHECK(a.test.size() == 24);
  CHECK(dataset_hash(a.train) == dataset_hash(build_seed_data(c, 0).train));
  CHECK(dataset_hash(a.train) != dataset_hash(build_seed_data(c, 1).train));
  c.dataset.vary_with_seed = false;
  CHECK(dataset_hash(build_seed_data(c, 0).train) == dataset_hash(build_seed_data(c, 1).train));
}

TEST_CASE("tables from results") {
  ExperimentConfig c = experiment_preset("lowres");
  c.seeds = {0, 1, 2};
  const std::vector<RunResult> runs = {
      result(Method::TrainA, 0, 0.9, 0.5), result(Method::TrainA, 1, 0.8, 0.7), result(Method::TrainB, 0, 0.6, 0.6),
      result(Method::CQD, 2, 0.75, 0.75)};
  const ResultsTable t = build_table(c, runs);
  REQUIRE(t.rows.size() == 6);
  CHECK(t.rows[0].label == "Upper bound");
  CHECK(*t.rows[0].mean == doctest::Approx(0.85));
  CHECK(t.rows[0].stddev == doctest::Approx(0.0707107).epsilon(1e-5));
  CHECK(*t.rows[1].mean == doctest::Approx(0.6));
  CHECK(t.rows[1].missing_seeds == std::vector<std::uint64_t>{2});
  CHECK(t.rows[2].n == 1);
  CHECK(t.rows[2].stddev == 0.0);
  CHECK_FALSE(t.rows[3].mean.has_value());
  CHECK(t.rows[3].missing_seeds.size() == 3);
  CHECK(t.rows[4].train_domain == "A then B");
  CHECK(*t.rows[5].paper == doctest::Approx(64.4));
  CHECK(t.reference_column == "Resolution CUB");

  const std::string csv = t.to_csv();
  const ResultsTable back = ResultsTable::from_csv(csv);
  CHECK(back.to_csv() == csv);
  CHECK(back.rows[1].missing_seeds == t.rows[1].missing_seeds);
  CHECK_THROWS_AS(ResultsTable::from_csv("bogus\n"), FormatError);
  CHECK_THROWS_AS(ResultsTable::from_csv("experiment,x\na,b\n"), FormatError);
  CHECK(t.to_text().find("Staged training") != std::string::npos);

  ExperimentConfig subset = c;
  subset.methods = {Method::TrainB, Method::CQD};
  CHECK(build_table(subset, runs).rows.size() == 2);
}

TEST_CASE("paper references") {
  CHECK(paper_reference(TransformKind::Identity) == std::nullopt);
  CHECK(paper_reference(TransformKind::Localize)->values[5] == doctest::Approx(64.4));
  CHECK(paper_reference(TransformKind::Edges)->values[1] == doctest::Approx(1.9));
  CHECK(paper_reference(TransformKind::Distort)->values[2] == doctest::Approx(58.4));
  CHECK(paper_reference(TransformKind::LocalizeLowRes)->values[4] == doctest::Approx(50.4));
}

TEST_CASE("smoke experiment is reproducible and cached") {
  ExperimentConfig c = experiment_preset("smoke");
  c.tau.enabled = true;
  c.output_dir = scratch_dir("smoke_a").string();
  const ExperimentOutcome a = run_experiment(c);
  CHECK_FALSE(a.any_failed);
  CHECK(a.runs.size() == 10);
  for (const auto& r : a.runs) CHECK_FALSE(r.reused);
  const fs::path out(c.output_dir);
  for (const char* f : {"table.csv", "table.txt", "run.json", "experiment.json", "tau/seed0.csv", "tau/summary.json"})
    CHECK(fs::exists(out / f));
  CHECK(fs::exists(out / "pretrain"));
  CHECK(a.tau["seed0"]["n"] == 8);

  // A fresh directory gives byte-identical artifacts.
  ExperimentConfig c2 = c;
  c2.output_dir = scratch_dir("smoke_b").string();
  run_experiment(c2);
  CHECK(read_file(out / "table.csv") == read_file(fs::path(c2.output_dir) / "table.csv"));
  CHECK(read_file(out / "tau/seed1.csv") == read_file(fs::path(c2.output_dir) / "tau/seed1.csv"));

  // Re-running in place reuses every run.
  const ExperimentOutcome again = run_experiment(c);
  for (const auto& r : again.runs) CHECK(r.reused);
  CHECK(again.table.to_csv() == a.table.to_csv());
  CHECK(report(out).to_csv() == a.table.to_csv());

  // Changing a training knob invalidates the dependent runs only.
  ExperimentConfig c3 = c;
  c3.train.lambda = 3;
  const ExperimentOutcome changed = run_experiment(c3);
  for (const auto& r : changed.runs) CHECK(r.reused == (r.method != Method::CQD));

  // A damaged checkpoint is not reused.
  const fs::path ckpt = out / "runs" / "TrainB-seed0" / "model.ckpt";
  std::string bytes = read_file(ckpt);
  bytes.back() ^= 1;
  write_file_atomic(ckpt, bytes);
  const ExperimentOutcome repaired = run_experiment(c3);
  for (const auto& r : repaired.runs)
    CHECK(r.reused == !(r.method == Method::TrainB && r.seed == 0));

  CHECK_THROWS_AS(report(scratch_dir("empty")), IoError);
}

TEST_CASE("teacher dependency is added automatically") {
  ExperimentConfig c = experiment_preset("smoke");
  c.methods = {Method::CQD};
  c.seeds = {0};
  c.output_dir = scratch_dir("dependency").string();
  const ExperimentOutcome o = run_experiment(c);
  REQUIRE(o.runs.size() == 1);
  CHECK(o.runs[0].ok);
  CHECK(fs::exists(fs::path(c.output_dir) / "runs" / "TrainA-seed0" / "model.ckpt"));
  CHECK(o.table.rows.size() == 1);
}
