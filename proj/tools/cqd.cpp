// cqd: command-line front end for data generation, training, evaluation,
// experiments and saliency analysis.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cqd/analysis.hpp"
#include "cqd/errors.hpp"
#include "cqd/harness.hpp"
#include "cqd/io.hpp"

namespace fs = std::filesystem;
using namespace cqd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitConfig = 2;

std::string manifest_kind(const fs::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  return m.value("kind", "");
}

void write_provenance(const fs::path& out, const std::string& command, const nlohmann::json& config,
                      const nlohmann::json& artifacts) {
  write_json_atomic(out / "run.json", {{"tool", "cqd"},
                                       {"version", kVersion},
                                       {"command", command},
                                       {"config_hash", sha256_hex(config.dump())},
                                       {"config", config},
                                       {"artifacts", artifacts}});
}

template <typename T>
T load_or_default(const std::optional<std::string>& path) {
  if (!path) return T{};
  try {
    return read_json(*path).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(*path + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-quality distillation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> method;
  std::optional<unsigned> jobs;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  std::string encoding = "f32";
  gen->add_option("--config", config_path, "shapes config JSON");
  gen->add_option("--seed", seed, "generator seed (overrides the config)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--encoding", encoding, "f32 or png")->check(CLI::IsMember({"f32", "png"}));

  // degrade
  auto* deg = app.add_subcommand("degrade", "Build a paired (x, z) dataset from a labeled one");
  std::string data_dir;
  std::optional<std::string> kind;
  std::optional<int> lowres_size;
  deg->add_option("--data", data_dir, "labeled dataset directory")->required();
  deg->add_option("--config", config_path, "transform descriptor JSON");
  deg->add_option("--kind", kind, "identity, localize, lowres, edges, distort or localize_lowres");
  deg->add_option("--lowres-size", lowres_size, "low-resolution side");
  deg->add_option("--seed", seed, "transform seed");
  deg->add_option("--out", out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train one method on a paired dataset");
  std::optional<std::string> teacher_path, eval_dir;
  tr->add_option("--data", data_dir, "paired training set")->required();
  tr->add_option("--config", config_path, "train config JSON");
  tr->add_option("--method", method, "TrainA, TrainB, TrainAB, Staged or CQD");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--teacher", teacher_path, "teacher checkpoint (CQD, Staged)");
  tr->add_option("--eval", eval_dir, "paired test set evaluated after every epoch");
  tr->add_option("--out", out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
  std::string model_path, view = "lq";
  ev->add_option("--model", model_path, "checkpoint")->required();
  ev->add_option("--data", data_dir, "labeled or paired dataset directory")->required();
  ev->add_option("--view", view, "hq or lq (paired data only)")->check(CLI::IsMember({"hq", "lq"}));

  // run
  auto* run = app.add_subcommand("run", "Run a full experiment");
  run->add_option("--config", config_path, "experiment config JSON")->required();
  run->add_option("--out", out, "results directory (overrides the config)");
  run->add_option("--seed", seed, "run only this seed");
  run->add_option("--method", method, "run only this method");
  run->add_option("--jobs", jobs, "parallel runs per seed");

  // report
  auto* rep = app.add_subcommand("report", "Render the results table of an experiment directory");
  rep->add_option("--out", out, "results directory")->required();

  // analyze-tau
  auto* tau_cmd = app.add_subcommand("analyze-tau", "Input-gradient localization fraction for two models");
  std::string model_b, model_cqd;
  std::size_t n_images = 200;
  std::string tau_view = "lq";
  tau_cmd->add_option("--model-b", model_b, "TrainB checkpoint")->required();
  tau_cmd->add_option("--model-cqd", model_cqd, "CQD checkpoint")->required();
  tau_cmd->add_option("--data", data_dir, "paired or labeled dataset with boxes")->required();
  tau_cmd->add_option("--n", n_images, "number of images");
  tau_cmd->add_option("--view", tau_view, "hq or lq (paired data only)")->check(CLI::IsMember({"hq", "lq"}));
  tau_cmd->add_option("--out", out, "output directory")->required();

  // config
  auto* cfg = app.add_subcommand("config", "Print configuration defaults");
  bool print_defaults = false;
  std::string cfg_kind = "experiment";
  std::optional<std::string> preset;
  cfg->add_flag("--print-defaults", print_defaults, "print the default configuration");
  cfg->add_option("--kind", cfg_kind, "experiment, train, shapes or transform")
      ->check(CLI::IsMember({"experiment", "train", "shapes", "transform"}));
  cfg->add_option("--preset", preset, "named experiment preset")->check(CLI::IsMember(experiment_presets()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) {
      auto sc = load_or_default<ShapesConfig>(config_path);
      if (seed) sc.seed = *seed;
      const auto data = gen_shapes(sc);
      save_labeled(data, out, encoding == "png" ? Encoding::Png : Encoding::F32);
      write_provenance(out, "gen-data", sc, {{"dataset", dataset_hash(data)}});
      std::cout << "wrote " << data.size() << " images to " << out << "\n";
      return kExitOk;
    }

    if (*deg) {
      auto spec = load_or_default<TransformSpec>(config_path);
      if (kind) spec.kind = transform_kind_from_string(*kind);
      if (lowres_size) spec.lowres_size = *lowres_size;
      const auto data = load_labeled(data_dir);
      const auto paired = make_paired(data, spec, seed.value_or(0));
      save_paired(paired, out);
      write_provenance(out, "degrade", {{"transform", spec}, {"seed", seed.value_or(0)}, {"source", data_dir}},
                       {{"source", dataset_hash(data)}, {"paired", dataset_hash(paired)}});
      std::cout << "paired " << paired.size() << " samples (" << paired.skipped.size() << " skipped) into " << out
                << "\n";
      return kExitOk;
    }

    if (*tr) {
      auto tc = load_or_default<TrainConfig>(config_path);
      if (method) tc.method = method_from_string(*method);
      if (seed) tc.seed = *seed;
      if (teacher_path) tc.teacher_checkpoint = *teacher_path;
      tc.validate();
      const auto paired = load_paired(data_dir);
      std::optional<PairedDataset> eval;
      if (eval_dir) eval = load_paired(*eval_dir);
      TrainOptions opts;
      if (eval) opts.eval = &*eval;
      const auto result = train(tc, paired, opts);
      fs::create_directories(out);
      save_checkpoint(result.model, fs::path(out) / "model.ckpt");
      write_json_atomic(fs::path(out) / "report.json", result.report);
      write_provenance(out, "train", tc,
                       {{"model.ckpt", sha256_hex(read_file(fs::path(out) / "model.ckpt"))},
                        {"data", dataset_hash(paired)}});
      std::cout << to_string(tc.method) << " done";
      if (result.report.final_accuracy >= 0) std::cout << ", accuracy " << result.report.final_accuracy;
      std::cout << "\n";
      return kExitOk;
    }

    if (*ev) {
      const Model model = load_checkpoint(model_path);
      double acc = 0;
      std::size_t n = 0;
      if (manifest_kind(data_dir) == "paired") {
        const auto data = load_paired(data_dir);
        acc = evaluate(model, data, view == "hq" ? View::HQ : View::LQ);
        n = data.size();
      } else {
        const auto data = load_labeled(data_dir);
        acc = evaluate(model, data);
        n = data.size();
      }
      std::cout << nlohmann::json{{"accuracy", acc}, {"n", n}, {"view", view}}.dump() << "\n";
      return kExitOk;
    }

    if (*run) {
      ExperimentConfig ec = load_experiment_config(*config_path);
      if (!out.empty()) ec.output_dir = out;
      if (seed) ec.seeds = {*seed};
      if (method) ec.methods = {method_from_string(*method)};
      if (jobs) ec.jobs = *jobs;
      const auto outcome = run_experiment(ec);
      std::cout << outcome.table.to_text();
      if (!outcome.tau.empty()) std::cout << "tau: " << outcome.tau.dump() << "\n";
      for (const auto& r : outcome.runs)
        if (!r.ok) std::cerr << "run " << to_string(r.method) << " seed " << r.seed << " failed: " << r.error << "\n";
      return outcome.any_failed ? kExitPartial : kExitOk;
    }

    if (*rep) {
      const auto table = report(out);
      write_file_atomic(fs::path(out) / "table.csv", table.to_csv());
      write_file_atomic(fs::path(out) / "table.txt", table.to_text());
      std::cout << table.to_text();
      const fs::path tau_summary_path = fs::path(out) / "tau" / "summary.json";
      if (fs::exists(tau_summary_path)) std::cout << "tau: " << read_json(tau_summary_path).dump() << "\n";
      const bool gaps = std::any_of(table.rows.begin(), table.rows.end(),
                                    [](const ResultsRow& r) { return !r.missing_seeds.empty(); });
      return gaps ? kExitPartial : kExitOk;
    }

    if (*tau_cmd) {
      const Model mb = load_checkpoint(model_b);
      const Model mc = load_checkpoint(model_cqd);
      LabeledDataset data = manifest_kind(data_dir) == "paired"
                                ? view_of(load_paired(data_dir), tau_view == "hq" ? View::HQ : View::LQ)
                                : load_labeled(data_dir);
      const auto scatter = tau_scatter(mb, mc, data, n_images);
      fs::create_directories(out);
      write_file_atomic(fs::path(out) / "tau.csv", tau_csv(scatter));
      const auto summary = tau_summary(scatter);
      write_json_atomic(fs::path(out) / "tau_summary.json", summary);
      std::cout << summary.dump() << "\n";
      return kExitOk;
    }

    if (*cfg) {
      nlohmann::json j;
      if (preset)
        j = experiment_preset(*preset);
      else if (cfg_kind == "experiment")
        j = ExperimentConfig{};
      else if (cfg_kind == "train")
        j = TrainConfig{};
      else if (cfg_kind == "shapes")
        j = ShapesConfig{};
      else
        j = TransformSpec{};
      (void)print_defaults;
      std::cout << j.dump(2) << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPartial;
  }
  return kExitOk;
}
