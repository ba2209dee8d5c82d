#include "cqd/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/parallel.hpp"

namespace cqd {

namespace fs = std::filesystem;

// --- config -----------------------------------------------------------------------

void to_json(nlohmann::json& j, const DatasetSource& d) {
  if (d.kind == DatasetSource::Kind::Synthetic) {
    j = {{"source", "synthetic"},
         {"shapes", d.shapes},
         {"test_per_class", d.test_per_class},
         {"vary_with_seed", d.vary_with_seed}};
  } else {
    j = {{"source", "directory"},
         {"root", d.root},
         {"label_file", d.label_file},
         {"box_file", d.box_file ? nlohmann::json(*d.box_file) : nlohmann::json(nullptr)},
         {"side", d.side},
         {"fractions", d.fractions}};
  }
}

void from_json(const nlohmann::json& j, DatasetSource& d) {
  const DatasetSource def;
  const std::string source = j.value("source", "synthetic");
  if (source == "synthetic") {
    d.kind = DatasetSource::Kind::Synthetic;
    d.shapes = j.contains("shapes") ? j["shapes"].get<ShapesConfig>() : def.shapes;
    d.test_per_class = j.value("test_per_class", def.test_per_class);
    d.vary_with_seed = j.value("vary_with_seed", def.vary_with_seed);
  } else if (source == "directory") {
    d.kind = DatasetSource::Kind::Directory;
    d.root = j.at("root").get<std::string>();
    d.label_file = j.at("label_file").get<std::string>();
    d.box_file.reset();
    if (j.contains("box_file") && !j["box_file"].is_null()) d.box_file = j["box_file"].get<std::string>();
    d.side = j.value("side", def.side);
    d.fractions = j.value("fractions", def.fractions);
  } else {
    throw ConfigError("dataset.source must be 'synthetic' or 'directory', got '" + source + "'");
  }
}

ShapesConfig PretrainOptions::default_shapes() {
  ShapesConfig s;
  s.num_classes = 20;
  s.samples_per_class = 200;
  s.seed = 0xBEEF;
  return s;
}

void to_json(nlohmann::json& j, const PretrainOptions& p) {
  j = {{"enabled", p.enabled},
       {"shapes", p.shapes},
       {"epochs", p.epochs},
       {"lr_start", p.schedule.start},
       {"lr_end", p.schedule.end},
       {"schedule_epochs", p.schedule.ramp_epochs},
       {"batch_size", p.batch_size},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, PretrainOptions& p) {
  const PretrainOptions d;
  p.enabled = j.value("enabled", d.enabled);
  p.shapes = j.contains("shapes") ? j["shapes"].get<ShapesConfig>() : d.shapes;
  p.epochs = j.value("epochs", d.epochs);
  p.schedule.start = j.value("lr_start", d.schedule.start);
  p.schedule.end = j.value("lr_end", d.schedule.end);
  p.schedule.ramp_epochs = j.value("schedule_epochs", d.schedule.ramp_epochs);
  p.batch_size = j.value("batch_size", d.batch_size);
  p.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  auto methods = nlohmann::json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  j = {{"schema_version", kExperimentSchemaVersion},
       {"name", c.name},
       {"dataset", c.dataset},
       {"transform", c.transform},
       {"methods", methods},
       {"seeds", c.seeds},
       {"train", c.train},
       {"pretrain", c.pretrain},
       {"tau", {{"enabled", c.tau.enabled}, {"images", c.tau.images}, {"split", c.tau.split}}},
       {"output_dir", c.output_dir},
       {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  if (!j.contains("schema_version")) throw ConfigError("experiment config lacks schema_version");
  if (j["schema_version"] != kExperimentSchemaVersion)
    throw ConfigError("experiment schema_version " + j["schema_version"].dump() + " is not supported (expected " +
                      std::to_string(kExperimentSchemaVersion) + ")");
  static const std::set<std::string> known{"schema_version", "name", "dataset", "transform", "methods",
                                           "seeds",          "train", "tau",     "output_dir", "jobs",
                                           "pretrain"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown experiment config key '" + key + "'");
  const ExperimentConfig def;
  try {
    c.name = j.value("name", def.name);
    c.dataset = j.contains("dataset") ? j["dataset"].get<DatasetSource>() : def.dataset;
    c.transform = j.contains("transform") ? j["transform"].get<TransformSpec>() : def.transform;
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
    } else {
      c.methods = def.methods;
    }
    c.seeds = j.value("seeds", def.seeds);
    c.train = j.contains("train") ? j["train"].get<TrainConfig>() : def.train;
    c.pretrain = j.contains("pretrain") ? j["pretrain"].get<PretrainOptions>() : def.pretrain;
    c.tau = def.tau;
    if (j.contains("tau")) {
      c.tau.enabled = j["tau"].value("enabled", def.tau.enabled);
      c.tau.images = j["tau"].value("images", def.tau.images);
      c.tau.split = j["tau"].value("split", def.tau.split);
    }
    c.output_dir = j.value("output_dir", def.output_dir);
    c.jobs = j.value("jobs", def.jobs);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("experiment needs at least one method");
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size())
    throw ConfigError("experiment lists a method twice");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("experiment lists a seed twice");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  train.validate();
  const bool staged = std::find(methods.begin(), methods.end(), Method::Staged) != methods.end();
  if (staged && !(train.student_arch == train.teacher_arch))
    throw ConfigError("Staged training needs identical teacher and student architectures");

  int side = 0;
  if (dataset.kind == DatasetSource::Kind::Synthetic) {
    dataset.shapes.validate();
    if (dataset.test_per_class < 1) throw ConfigError("test_per_class must be positive");
    side = dataset.shapes.side;
  } else {
    if (dataset.root.empty() || dataset.label_file.empty())
      throw ConfigError("directory dataset needs root and label_file");
    if (transform.needs_box() && !dataset.box_file)
      throw ConfigError("transform '" + to_string(transform.kind) + "' needs boxes but no box_file is configured");
    const auto& f = dataset.fractions;
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9 || f[0] <= 0 || f[2] <= 0)
      throw ConfigError("dataset fractions must sum to 1 with non-empty train and test parts");
    side = dataset.side;
  }
  if (train.student_arch.input_h != side || train.teacher_arch.input_h != side)
    throw ConfigError("architectures expect " + std::to_string(train.student_arch.input_h) + " px inputs, data is " +
                      std::to_string(side) + " px");
  if ((transform.kind == TransformKind::LowRes || transform.kind == TransformKind::LocalizeLowRes) &&
      !(transform.lowres_size > 1 && transform.lowres_size <= side))
    throw ConfigError("lowres_size must be in (1, " + std::to_string(side) + "]");
  if (tau.split != "test" && tau.split != "train") throw ConfigError("tau.split must be 'test' or 'train'");
  if (pretrain.enabled) {
    pretrain.shapes.validate();
    if (pretrain.shapes.side != side) throw ConfigError("pretraining images must match the data side");
    if (pretrain.epochs < 1 || pretrain.batch_size < 1) throw ConfigError("pretraining needs positive epochs and batch size");
    if (!(pretrain.schedule.start > 0) || !(pretrain.schedule.end > 0))
      throw ConfigError("pretraining learning rates must be positive");
  }
}

std::vector<std::string> experiment_presets() { return {"lowres", "localize", "compress", "compress_shallow", "smoke"}; }

ExperimentConfig experiment_preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  c.dataset.shapes.stripe_min = 3.0;
  c.dataset.shapes.stripe_max = 8.0;
  c.train.schedule = {0.01, 0.001, 15};
  c.train.finetune_schedule = LrSchedule{0.002, 0.0002, 15};
  c.train.total_epochs = 15;
  c.train.stage_one_epochs = 15;
  c.train.lambda = 8;
  c.train.temperature = 4;
  c.pretrain.enabled = true;
  c.pretrain.shapes.stripe_min = 3.0;
  c.pretrain.shapes.stripe_max = 8.0;
  c.transform.kind = TransformKind::LowRes;
  c.transform.lowres_size = 16;
  if (name == "lowres") {
  } else if (name == "localize") {
    c.transform.kind = TransformKind::Localize;
    c.dataset.shapes.clutter_density = 6.0;
    c.dataset.shapes.scale_min = 0.3;
    c.dataset.shapes.scale_max = 0.5;
  } else if (name == "compress" || name == "compress_shallow") {
    // Both teachers distil into a cold student with the same settings.
    if (name == "compress") c.train.teacher_arch = ArchSpec::deep(c.dataset.shapes.side);
    c.train.init_from_teacher = false;
    c.methods = {Method::TrainA, Method::TrainB, Method::CQD};
  } else if (name == "smoke") {
    c.dataset.shapes.num_classes = 4;
    c.dataset.shapes.samples_per_class = 12;
    c.dataset.shapes.side = 32;
    c.dataset.test_per_class = 6;
    c.transform.lowres_size = 8;
    c.train.student_arch = ArchSpec::shallow(32);
    c.train.teacher_arch = ArchSpec::shallow(32);
    c.train.total_epochs = 2;
    c.train.stage_one_epochs = 2;
    c.train.batch_size = 16;
    c.seeds = {0, 1};
    c.tau.images = 8;
    c.pretrain.shapes.num_classes = 4;
    c.pretrain.shapes.samples_per_class = 12;
    c.pretrain.shapes.side = 32;
    c.pretrain.epochs = 1;
    c.pretrain.batch_size = 16;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = read_json(path);
  } catch (const Error& e) {
    throw ConfigError(std::string("cannot read experiment config: ") + e.what());
  }
  ExperimentConfig c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

// --- data ---------------------------------------------------------------------------

namespace {

std::uint64_t data_seed(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.dataset.kind == DatasetSource::Kind::Synthetic && !c.dataset.vary_with_seed) return c.dataset.shapes.seed;
  return derive_seed(c.dataset.kind == DatasetSource::Kind::Synthetic ? c.dataset.shapes.seed : 0, seed);
}

// Everything a seed's datasets depend on.
nlohmann::json data_descriptor(const ExperimentConfig& c, std::uint64_t seed) {
  return {{"dataset", c.dataset}, {"transform", c.transform}, {"data_seed", data_seed(c, seed)}};
}

}  // namespace

SeedData build_seed_data(const ExperimentConfig& c, std::uint64_t seed) {
  const std::uint64_t ds = data_seed(c, seed);
  LabeledDataset train, test;
  if (c.dataset.kind == DatasetSource::Kind::Synthetic) {
    ShapesConfig tr = c.dataset.shapes;
    tr.seed = derive_seed(ds, 1);
    ShapesConfig te = c.dataset.shapes;
    te.samples_per_class = c.dataset.test_per_class;
    te.seed = derive_seed(ds, 2);
    train = gen_shapes(tr);
    test = gen_shapes(te);
  } else {
    const auto& d = c.dataset;
    auto all = load_image_dir(d.root, d.label_file,
                              d.box_file ? std::optional<fs::path>(*d.box_file) : std::nullopt, d.side);
    auto parts = split(all, d.fractions, ds);
    train = std::move(parts.train);
    test = std::move(parts.test);
  }
  train.split = "train";
  test.split = "test";
  SeedData out{make_paired(train, c.transform, derive_seed(ds, 3)), make_paired(test, c.transform, derive_seed(ds, 4))};
  out.train.split = "train";
  out.test.split = "test";
  return out;
}

TrainConfig run_config(const ExperimentConfig& c, Method method, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.method = method;
  t.seed = seed;
  if (method == Method::TrainA) t.student_arch = t.teacher_arch;
  return t;
}

// --- results ------------------------------------------------------------------------

void to_json(nlohmann::json& j, const RunResult& r) {
  j = {{"method", to_string(r.method)},
       {"seed", r.seed},
       {"key", r.key},
       {"ok", r.ok},
       {"error", r.error},
       {"accuracy", r.accuracy},
       {"accuracy_hq", r.accuracy_hq},
       {"accuracy_lq", r.accuracy_lq},
       {"checkpoint_sha256", r.checkpoint_sha256}};
}

void from_json(const nlohmann::json& j, RunResult& r) {
  r.method = method_from_string(j.at("method").get<std::string>());
  r.seed = j.at("seed");
  r.key = j.at("key");
  r.ok = j.at("ok");
  r.error = j.value("error", "");
  r.accuracy = j.at("accuracy");
  r.accuracy_hq = j.at("accuracy_hq");
  r.accuracy_lq = j.at("accuracy_lq");
  r.checkpoint_sha256 = j.value("checkpoint_sha256", "");
}

std::optional<PaperColumn> paper_reference(TransformKind kind) {
  switch (kind) {
    case TransformKind::Localize: return PaperColumn{"Local. CUB", {67.0, 57.4, 60.8, 63.6, 62.4, 64.4}};
    case TransformKind::LowRes: return PaperColumn{"Resolution CUB", {67.0, 39.4, 61.0, 62.2, 62.3, 64.4}};
    case TransformKind::Edges: return PaperColumn{"Edge CUB", {67.0, 1.9, 29.2, 32.5, 30.4, 34.1}};
    case TransformKind::Distort: return PaperColumn{"Dist. CUB", {67.0, 49.7, 58.4, 61.7, 60.9, 63.0}};
    case TransformKind::LocalizeLowRes:
      return PaperColumn{"Local. + Res. CUB", {67.0, 24.9, 46.2, 51.7, 50.4, 52.7}};
    case TransformKind::Identity: return std::nullopt;
  }
  return std::nullopt;
}

namespace {

struct RowSpec {
  const char* label;
  Method method;
  const char* train_domain;
  const char* test_domain;
  int paper_index;
};

constexpr RowSpec kRows[] = {
    {"Upper bound", Method::TrainA, "A", "A", 0},          {"No adaptation", Method::TrainA, "A", "B", 1},
    {"Fine-tuning", Method::TrainB, "B", "B", 2},          {"Data augment.", Method::TrainAB, "A+B", "B", 3},
    {"Staged training", Method::Staged, "A then B", "B", 4}, {"Proposed", Method::CQD, "CQD", "B", 5},
};

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("results table: bad number '" + s + "'");
  return v;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

ResultsTable build_table(const ExperimentConfig& config, const std::vector<RunResult>& results) {
  ResultsTable t;
  t.experiment = config.name;
  const auto ref = paper_reference(config.transform.kind);
  t.reference_column = ref ? ref->name : "";
  for (const RowSpec& spec : kRows) {
    if (std::find(config.methods.begin(), config.methods.end(), spec.method) == config.methods.end()) continue;
    ResultsRow row;
    row.label = spec.label;
    row.method = spec.method;
    row.train_domain = spec.train_domain;
    row.test_domain = spec.test_domain;
    if (ref) row.paper = ref->values[static_cast<std::size_t>(spec.paper_index)];
    std::vector<double> acc;
    for (std::uint64_t seed : config.seeds) {
      const auto it = std::find_if(results.begin(), results.end(), [&](const RunResult& r) {
        return r.method == spec.method && r.seed == seed && r.ok;
      });
      if (it == results.end()) {
        row.missing_seeds.push_back(seed);
        continue;
      }
      acc.push_back(spec.paper_index == 1 ? it->accuracy_lq : it->accuracy);
    }
    row.n = acc.size();
    if (!acc.empty()) {
      double s = 0;
      for (double a : acc) s += a;
      const double mean = s / static_cast<double>(acc.size());
      row.mean = mean;
      if (acc.size() > 1) {
        double v = 0;
        for (double a : acc) v += (a - mean) * (a - mean);
        row.stddev = std::sqrt(v / static_cast<double>(acc.size() - 1));
      }
    }
    t.rows.push_back(row);
  }
  return t;
}

std::string ResultsTable::to_csv() const {
  std::ostringstream os;
  os << "experiment,reference_column,label,method,train_domain,test_domain,mean_accuracy,std_accuracy,n_seeds,"
        "missing_seeds,paper_reference\n";
  for (const auto& r : rows) {
    std::string missing;
    for (std::size_t i = 0; i < r.missing_seeds.size(); ++i)
      missing += (i ? ";" : "") + std::to_string(r.missing_seeds[i]);
    os << experiment << ',' << reference_column << ',' << r.label << ',' << to_string(r.method) << ','
       << r.train_domain << ',' << r.test_domain << ',' << (r.mean ? fmt_double(*r.mean) : "") << ','
       << fmt_double(r.stddev) << ',' << r.n << ',' << missing << ',' << (r.paper ? fmt_double(*r.paper) : "")
       << '\n';
  }
  return os.str();
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line.rfind("experiment,", 0) != 0) throw FormatError("results table: bad header");
  ResultsTable t;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 11) throw FormatError("results table: expected 11 fields, got " + std::to_string(f.size()));
    t.experiment = f[0];
    t.reference_column = f[1];
    ResultsRow r;
    r.label = f[2];
    r.method = method_from_string(f[3]);
    r.train_domain = f[4];
    r.test_domain = f[5];
    if (!f[6].empty()) r.mean = parse_double(f[6]);
    r.stddev = parse_double(f[7]);
    r.n = static_cast<std::size_t>(std::stoull(f[8]));
    std::stringstream ms(f[9]);
    std::string s;
    while (std::getline(ms, s, ';'))
      if (!s.empty()) r.missing_seeds.push_back(std::stoull(s));
    if (!f[10].empty()) r.paper = parse_double(f[10]);
    t.rows.push_back(r);
  }
  return t;
}

std::string ResultsTable::to_text() const {
  std::ostringstream os;
  char buf[256];
  os << "Experiment: " << experiment << '\n';
  std::snprintf(buf, sizeof buf, "%-16s %-9s %-4s %-16s %-6s %s\n", "Description", "Train", "Test", "Accuracy (%)",
                "Seeds", ("Paper " + (reference_column.empty() ? std::string("-") : reference_column)).c_str());
  os << buf;
  for (const auto& r : rows) {
    std::string acc = "missing";
    if (r.mean) {
      std::snprintf(buf, sizeof buf, "%.1f +- %.1f", 100.0 * *r.mean, 100.0 * r.stddev);
      acc = buf;
    }
    const std::string seeds = std::to_string(r.n) + "/" + std::to_string(r.n + r.missing_seeds.size());
    std::string paper = "-";
    if (r.paper) {
      std::snprintf(buf, sizeof buf, "%.1f", *r.paper);
      paper = buf;
    }
    std::snprintf(buf, sizeof buf, "%-16s %-9s %-4s %-16s %-6s %s\n", r.label.c_str(), r.train_domain.c_str(),
                  r.test_domain.c_str(), acc.c_str(), seeds.c_str(), paper.c_str());
    os << buf;
  }
  if (!reference_column.empty())
    os << "Paper values come from the published table and are shown for orientation only.\n";
  return os.str();
}

// --- experiment runner ---------------------------------------------------------------

namespace {

fs::path run_dir(const fs::path& out, Method m, std::uint64_t seed) {
  return out / "runs" / (to_string(m) + "-seed" + std::to_string(seed));
}

bool needs_teacher(Method m) { return m == Method::Staged || m == Method::CQD; }

// The run config with knobs its method ignores reset, so that changing them
// does not invalidate unrelated cached runs.
TrainConfig key_config(TrainConfig t) {
  const TrainConfig d;
  const Method m = t.method;
  if (m != Method::CQD) {
    t.lambda = d.lambda;
    t.temperature = d.temperature;
    t.loss2_kind = d.loss2_kind;
    t.init_from_teacher = d.init_from_teacher;
  }
  if (m != Method::CQD && m != Method::Staged) {
    t.finetune_schedule.reset();
    t.teacher_checkpoint.reset();
    t.teacher_arch = t.student_arch;
  }
  if (m != Method::Staged) t.stage_one_epochs = d.stage_one_epochs;
  if (m != Method::TrainAB) t.separate_heads = d.separate_heads;
  return t;
}

std::string run_key(const ExperimentConfig& c, Method m, std::uint64_t seed, const std::string& teacher_key,
                    const std::string& init_key) {
  nlohmann::json j = {{"version", kVersion},
                      {"data", data_descriptor(c, seed)},
                      {"train", key_config(run_config(c, m, seed))},
                      {"teacher", teacher_key}};
  if (!init_key.empty()) j["init"] = init_key;
  return sha256_hex(j.dump());
}

std::string pretrain_key(const PretrainOptions& p, const ArchSpec& arch) {
  nlohmann::json j = {{"version", kVersion}, {"pretrain", p}, {"arch", arch}};
  return sha256_hex(j.dump());
}

std::optional<RunResult> load_cached(const fs::path& dir, const std::string& key) {
  const fs::path result = dir / "result.json";
  if (!fs::exists(result) || !fs::exists(dir / "model.ckpt")) return std::nullopt;
  try {
    auto r = read_json(result).get<RunResult>();
    if (!r.ok || r.key != key) return std::nullopt;
    if (sha256_hex(read_file(dir / "model.ckpt")) != r.checkpoint_sha256) return std::nullopt;
    r.reused = true;
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

class Runner {
 public:
  explicit Runner(const ExperimentConfig& c) : cfg_(c), out_(c.output_dir) {}

  ExperimentOutcome run() {
    fs::create_directories(out_);
    write_json_atomic(out_ / "experiment.json", cfg_);
    ExperimentOutcome outcome;
    if (cfg_.pretrain.enabled) pretrain_all();
    for (std::uint64_t seed : cfg_.seeds) run_seed(seed, outcome);
    outcome.table = build_table(cfg_, outcome.runs);
    for (Method m : cfg_.methods) {
      const bool any_ok = std::any_of(outcome.runs.begin(), outcome.runs.end(),
                                      [&](const RunResult& r) { return r.method == m && r.ok; });
      if (!any_ok) outcome.any_method_failed_entirely = true;
    }
    outcome.any_failed = std::any_of(outcome.runs.begin(), outcome.runs.end(), [](const RunResult& r) { return !r.ok; });

    const std::string csv = outcome.table.to_csv();
    write_file_atomic(out_ / "table.csv", csv);
    write_file_atomic(out_ / "table.txt", outcome.table.to_text());
    if (cfg_.tau.enabled) write_json_atomic(out_ / "tau" / "summary.json", outcome.tau);
    write_provenance(outcome);
    return outcome;
  }

 private:
  struct Pretrained {
    std::string key;
    Model model;
  };

  // One pretrained model per architecture in use, cached by its own key.
  void pretrain_all() {
    std::vector<ArchSpec> archs;
    for (Method m : methods_for_seed()) {
      const ArchSpec a = run_config(cfg_, m, 0).student_arch;
      if (std::find(archs.begin(), archs.end(), a) == archs.end()) archs.push_back(a);
    }
    for (const ArchSpec& arch : archs) {
      const std::string key = pretrain_key(cfg_.pretrain, arch);
      const fs::path dir = out_ / "pretrain" / key.substr(0, 16);
      const fs::path ckpt = dir / "model.ckpt";
      std::optional<Model> model;
      if (fs::exists(dir / "key.txt") && fs::exists(ckpt) && read_file(dir / "key.txt") == key) {
        try {
          model = load_checkpoint(ckpt);
        } catch (const Error&) {
        }
      }
      if (!model) {
        const LabeledDataset shapes = gen_shapes(cfg_.pretrain.shapes);
        const PairedDataset paired = make_paired(shapes, TransformSpec{}, derive_seed(cfg_.pretrain.seed, 1));
        TrainConfig tc;
        tc.method = Method::TrainA;
        tc.student_arch = arch;
        tc.teacher_arch = arch;
        tc.total_epochs = cfg_.pretrain.epochs;
        tc.schedule = cfg_.pretrain.schedule;
        tc.batch_size = cfg_.pretrain.batch_size;
        tc.seed = cfg_.pretrain.seed;
        TrainOptions opts;
        opts.eval_every = 0;
        model = train(tc, paired, opts).model;
        fs::create_directories(dir);
        save_checkpoint(*model, ckpt);
        write_file_atomic(dir / "key.txt", key);
      }
      pretrained_.push_back({key, std::move(*model)});
    }
  }

  const Pretrained* init_for(Method m) const {
    if (!cfg_.pretrain.enabled) return nullptr;
    const ArchSpec arch = run_config(cfg_, m, 0).student_arch;
    for (const auto& p : pretrained_)
      if (p.model.arch() == arch) return &p;
    return nullptr;
  }

  std::string key_for(Method m, std::uint64_t seed, const std::string& teacher_key) const {
    const Pretrained* p = init_for(m);
    return run_key(cfg_, m, seed, teacher_key, p ? p->key : std::string());
  }

  std::vector<Method> methods_for_seed() const {
    std::vector<Method> ms = cfg_.methods;
    const bool want_teacher = std::any_of(ms.begin(), ms.end(), needs_teacher) && !cfg_.train.teacher_checkpoint;
    if (want_teacher && std::find(ms.begin(), ms.end(), Method::TrainA) == ms.end()) ms.push_back(Method::TrainA);
    return ms;
  }

  void run_seed(std::uint64_t seed, ExperimentOutcome& outcome) {
    const auto methods = methods_for_seed();
    std::optional<SeedData> data;
    auto ensure_data = [&]() -> SeedData& {
      if (!data) data = build_seed_data(cfg_, seed);
      return *data;
    };

    // The teacher: either an external checkpoint or this seed's TrainA run.
    std::string teacher_key;
    std::optional<Model> teacher;
    std::optional<RunResult> teacher_result;
    if (cfg_.train.teacher_checkpoint) {
      teacher_key = sha256_hex(read_file(*cfg_.train.teacher_checkpoint));
      teacher = load_checkpoint(*cfg_.train.teacher_checkpoint);
    }
    if (std::find(methods.begin(), methods.end(), Method::TrainA) != methods.end()) {
      RunResult r = execute(Method::TrainA, seed, "", nullptr, ensure_data);
      if (!cfg_.train.teacher_checkpoint && r.ok) {
        teacher_key = r.key;
        teacher = load_checkpoint(run_dir(out_, Method::TrainA, seed) / "model.ckpt");
      }
      teacher_result = r;
    }

    std::vector<Method> rest;
    for (Method m : methods)
      if (m != Method::TrainA) rest.push_back(m);
    std::vector<RunResult> results(rest.size());
    // Build the data up front when anything needs training so worker threads share it.
    bool all_cached = true;
    for (Method m : rest)
      if (!load_cached(run_dir(out_, m, seed), key_for(m, seed, teacher_key))) all_cached = false;
    if (!all_cached || cfg_.tau.enabled) ensure_data();
    std::mutex data_mutex;
    auto locked_data = [&]() -> SeedData& {
      std::lock_guard lock(data_mutex);
      return ensure_data();
    };
    parallel_for(rest.size(), cfg_.jobs, [&](std::size_t i) {
      const Method m = rest[i];
      if (needs_teacher(m) && !teacher) {
        results[i] = failed(m, seed, "teacher unavailable (TrainA failed)");
        return;
      }
      results[i] = execute(m, seed, teacher_key, teacher ? &*teacher : nullptr, locked_data);
    });

    if (teacher_result && std::find(cfg_.methods.begin(), cfg_.methods.end(), Method::TrainA) != cfg_.methods.end())
      outcome.runs.push_back(*teacher_result);
    for (std::size_t i = 0; i < rest.size(); ++i) outcome.runs.push_back(results[i]);

    if (cfg_.tau.enabled) tau_for_seed(seed, rest, results, ensure_data(), outcome);
  }

  RunResult failed(Method m, std::uint64_t seed, std::string why) {
    RunResult r;
    r.method = m;
    r.seed = seed;
    r.ok = false;
    r.error = std::move(why);
    return r;
  }

  template <typename DataFn>
  RunResult execute(Method m, std::uint64_t seed, const std::string& teacher_key, const Model* teacher,
                    DataFn&& get_data) {
    const fs::path dir = run_dir(out_, m, seed);
    const std::string key = key_for(m, seed, teacher_key);
    if (auto cached = load_cached(dir, key)) return *cached;

    RunResult r;
    r.method = m;
    r.seed = seed;
    r.key = key;
    try {
      SeedData& data = get_data();
      TrainOptions opts;
      opts.teacher = needs_teacher(m) ? teacher : nullptr;
      opts.eval = &data.test;
      opts.eval_every = 0;
      if (const Pretrained* p = init_for(m)) opts.init = &p->model;
      TrainConfig tc = run_config(cfg_, m, seed);
      auto trained = train(tc, data.train, opts);
      r.accuracy_hq = evaluate(trained.model, data.test, View::HQ);
      r.accuracy_lq = evaluate(trained.model, data.test, View::LQ);
      r.accuracy = target_view(m) == View::HQ ? r.accuracy_hq : r.accuracy_lq;
      fs::create_directories(dir);
      const fs::path ckpt = dir / "model.ckpt";
      save_checkpoint(trained.model, ckpt);
      r.checkpoint_sha256 = sha256_hex(read_file(ckpt));
      write_json_atomic(dir / "report.json", trained.report);
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
    fs::create_directories(dir);
    write_json_atomic(dir / "result.json", r);
    return r;
  }

  void tau_for_seed(std::uint64_t seed, const std::vector<Method>& rest, const std::vector<RunResult>& results,
                    SeedData& data, ExperimentOutcome& outcome) {
    auto find = [&](Method m) -> const RunResult* {
      for (std::size_t i = 0; i < rest.size(); ++i)
        if (rest[i] == m && results[i].ok) return &results[i];
      return nullptr;
    };
    const RunResult* rb = find(Method::TrainB);
    const RunResult* rc = find(Method::CQD);
    const std::string key = "seed" + std::to_string(seed);
    if (!rb || !rc) {
      outcome.tau[key] = {{"defined", false}, {"reason", "TrainB and CQD runs are both required"}};
      return;
    }
    const Model mb = load_checkpoint(run_dir(out_, Method::TrainB, seed) / "model.ckpt");
    const Model mc = load_checkpoint(run_dir(out_, Method::CQD, seed) / "model.ckpt");
    const LabeledDataset view = view_of(cfg_.tau.split == "train" ? data.train : data.test, View::LQ);
    const TauScatter scatter = tau_scatter(mb, mc, view, cfg_.tau.images);
    write_file_atomic(out_ / "tau" / (key + ".csv"), tau_csv(scatter));
    nlohmann::json summary = tau_summary(scatter);
    summary["split"] = cfg_.tau.split;
    outcome.tau[key] = summary;
  }

  void write_provenance(const ExperimentOutcome& outcome) {
    nlohmann::json cfg = cfg_;
    cfg.erase("output_dir");
    cfg.erase("jobs");
    nlohmann::json artifacts = nlohmann::json::object();
    for (const auto& r : outcome.runs)
      if (r.ok)
        artifacts[(fs::path("runs") / (to_string(r.method) + "-seed" + std::to_string(r.seed)) / "model.ckpt")
                      .generic_string()] = r.checkpoint_sha256;
    artifacts["table.csv"] = sha256_hex(outcome.table.to_csv());
    if (cfg_.tau.enabled)
      for (std::uint64_t seed : cfg_.seeds) {
        const fs::path p = out_ / "tau" / ("seed" + std::to_string(seed) + ".csv");
        if (fs::exists(p)) artifacts[("tau/seed" + std::to_string(seed) + ".csv")] = sha256_hex(read_file(p));
      }
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : outcome.runs)
      runs.push_back({{"method", to_string(r.method)}, {"seed", r.seed}, {"ok", r.ok}, {"reused", r.reused},
                      {"error", r.error}});
    const nlohmann::json prov = {{"tool", "cqd"},
                                 {"version", kVersion},
                                 {"config_hash", sha256_hex(cfg.dump())},
                                 {"config", cfg},
                                 {"artifacts", artifacts},
                                 {"runs", runs},
                                 {"formats",
                                  {{"checkpoint", kCheckpointVersion},
                                   {"dataset_manifest", kManifestVersion},
                                   {"train_report", kTrainReportVersion},
                                   {"experiment_schema", kExperimentSchemaVersion}}}};
    write_json_atomic(out_ / "run.json", prov);
  }

  const ExperimentConfig& cfg_;
  fs::path out_;
  std::vector<Pretrained> pretrained_;
};

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  config.validate();
  return Runner(config).run();
}

ResultsTable report(const fs::path& results_dir) {
  const fs::path exp = results_dir / "experiment.json";
  if (!fs::exists(exp)) throw IoError("no experiment.json under " + results_dir.string());
  const ExperimentConfig cfg = read_json(exp).get<ExperimentConfig>();
  std::vector<RunResult> results;
  for (Method m : cfg.methods)
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path p = run_dir(results_dir, m, seed) / "result.json";
      if (fs::exists(p)) results.push_back(read_json(p).get<RunResult>());
    }
  return build_table(cfg, results);
}

}  // namespace cqd
