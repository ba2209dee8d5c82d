#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/analysis.hpp"
#include "cqd/data.hpp"
#include "cqd/distill.hpp"

namespace cqd {

inline constexpr int kExperimentSchemaVersion = 1;
inline constexpr const char* kVersion = "1.0.0";

struct DatasetSource {
  enum class Kind { Synthetic, Directory };
  Kind kind = Kind::Synthetic;

  // synthetic
  ShapesConfig shapes;
  int test_per_class = 200;
  /// Draw a fresh dataset for every experiment seed.
  bool vary_with_seed = true;

  // directory
  std::string root;
  std::string label_file;
  std::optional<std::string> box_file;
  int side = 64;
  /// train / val / test fractions for the stratified split.
  std::array<double, 3> fractions{0.7, 0.0, 0.3};
};

/// Shared starting point for every method: a model trained on a separate,
/// larger synthetic high-quality task. Each run replaces its classifier.
struct PretrainOptions {
  bool enabled = false;
  ShapesConfig shapes = default_shapes();
  int epochs = 15;
  LrSchedule schedule{0.02, 0.002, 15};
  int batch_size = 64;
  std::uint64_t seed = 77;

  static ShapesConfig default_shapes();
};

void to_json(nlohmann::json& j, const PretrainOptions& p);
void from_json(const nlohmann::json& j, PretrainOptions& p);

struct TauOptions {
  bool enabled = false;
  std::size_t images = 200;
  /// "test" or "train": which split's LQ view the gradients are taken on.
  std::string split = "train";
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSource dataset;
  TransformSpec transform;
  std::vector<Method> methods{Method::TrainA, Method::TrainB, Method::TrainAB, Method::Staged, Method::CQD};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  /// Template for every run; method and seed are filled in per run. TrainA
  /// trains teacher_arch, every other method trains student_arch.
  TrainConfig train;
  PretrainOptions pretrain;
  TauOptions tau;
  std::string output_dir = "results";
  /// Worker threads for independent runs of one seed.
  unsigned jobs = 1;

  /// Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSource& d);
void from_json(const nlohmann::json& j, DatasetSource& d);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Named, calibrated experiment configurations: "lowres", "localize",
/// "compress" (deep teacher, shallow student) and "smoke" (tiny, for tests).
std::vector<std::string> experiment_presets();
/// Throws ConfigError for an unknown name.
ExperimentConfig experiment_preset(const std::string& name);

/// Parses and validates; throws ConfigError on schema problems.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// The paired train/test sets of one experiment seed.
struct SeedData {
  PairedDataset train;
  PairedDataset test;
};
SeedData build_seed_data(const ExperimentConfig& config, std::uint64_t seed);

/// Resolved training config of one run.
TrainConfig run_config(const ExperimentConfig& config, Method method, std::uint64_t seed);

// --- results ----------------------------------------------------------------------

struct RunResult {
  Method method = Method::TrainB;
  std::uint64_t seed = 0;
  std::string key;  ///< content hash of everything the run depends on
  bool ok = false;
  std::string error;
  double accuracy = 0.0;     ///< on the method's target test view
  double accuracy_hq = 0.0;  ///< test x-view
  double accuracy_lq = 0.0;  ///< test z-view
  std::string checkpoint_sha256;
  bool reused = false;
};

void to_json(nlohmann::json& j, const RunResult& r);
void from_json(const nlohmann::json& j, RunResult& r);

struct ResultsRow {
  std::string label;  ///< Upper bound, No adaptation, ...
  Method method = Method::TrainB;
  std::string train_domain;
  std::string test_domain;
  std::optional<double> mean;  ///< empty when no seed contributed
  double stddev = 0.0;         ///< sample standard deviation over seeds
  std::size_t n = 0;
  std::vector<std::uint64_t> missing_seeds;
  std::optional<double> paper;  ///< reference value in percent, display only
};

struct ResultsTable {
  std::string experiment;
  std::string reference_column;  ///< which paper column the references come from
  std::vector<ResultsRow> rows;

  std::string to_csv() const;
  static ResultsTable from_csv(const std::string& text);
  std::string to_text() const;
};

ResultsTable build_table(const ExperimentConfig& config, const std::vector<RunResult>& results);

struct ExperimentOutcome {
  ResultsTable table;
  std::vector<RunResult> runs;
  /// Per-seed τ scatter summaries (when enabled and both TrainB and CQD ran).
  nlohmann::json tau = nlohmann::json::object();
  bool any_failed = false;
  bool any_method_failed_entirely = false;
};

/// Trains every (method, seed) in dependency order under config.output_dir,
/// skipping runs whose stored content key matches. Writes table.csv,
/// table.txt, run.json and, when enabled, tau/.
ExperimentOutcome run_experiment(const ExperimentConfig& config);

/// Re-renders the table of a results directory written by run_experiment.
ResultsTable report(const std::filesystem::path& results_dir);

/// Paper reference values (percent) for a transform kind, in row order
/// Upper bound, No adaptation, Fine-tuning, Data augment., Staged, Proposed.
struct PaperColumn {
  std::string name;
  std::array<double, 6> values;
};
std::optional<PaperColumn> paper_reference(TransformKind kind);

}  // namespace cqd
