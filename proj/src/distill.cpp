#include "cqd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/ops.hpp"

namespace cqd {

std::string to_string(Method m) {
  switch (m) {
    case Method::TrainA: return "TrainA";
    case Method::TrainB: return "TrainB";
    case Method::TrainAB: return "TrainAB";
    case Method::Staged: return "Staged";
    case Method::CQD: return "CQD";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  for (Method m : {Method::TrainA, Method::TrainB, Method::TrainAB, Method::Staged, Method::CQD})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "' (expected TrainA, TrainB, TrainAB, Staged or CQD)");
}

std::string to_string(Loss2Kind k) { return k == Loss2Kind::SmoothedCE ? "smoothed_ce" : "squared_logits"; }

Loss2Kind loss2_kind_from_string(const std::string& s) {
  if (s == "smoothed_ce") return Loss2Kind::SmoothedCE;
  if (s == "squared_logits") return Loss2Kind::SquaredLogits;
  throw ConfigError("unknown loss2_kind '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(temperature > 0) || !std::isfinite(temperature)) throw ConfigError("temperature must be positive");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be non-negative");
  if (!(schedule.start > 0) || !(schedule.end > 0)) throw ConfigError("learning rates must be positive");
  if (schedule.ramp_epochs < 0) throw ConfigError("schedule_epochs must be non-negative");
  if (finetune_schedule && (!(finetune_schedule->start > 0) || !(finetune_schedule->end > 0) ||
                            finetune_schedule->ramp_epochs < 0))
    throw ConfigError("finetune schedule must have positive rates and non-negative epochs");
  if (total_epochs < 0 || stage_one_epochs < 0) throw ConfigError("epoch counts must be non-negative");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (method == Method::Staged && !(student_arch == teacher_arch))
    throw ConfigError("Staged training needs identical teacher and student architectures");
  try {
    student_arch.feature_shape();
    teacher_arch.feature_shape();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", to_string(c.method)},
       {"lambda", c.lambda},
       {"temperature", c.temperature},
       {"loss2_kind", to_string(c.loss2_kind)},
       {"lr_start", c.schedule.start},
       {"lr_end", c.schedule.end},
       {"schedule_epochs", c.schedule.ramp_epochs},
       {"finetune_schedule", c.finetune_schedule ? nlohmann::json{{"lr_start", c.finetune_schedule->start},
                                                                  {"lr_end", c.finetune_schedule->end},
                                                                  {"schedule_epochs", c.finetune_schedule->ramp_epochs}}
                                                 : nlohmann::json(nullptr)},
       {"total_epochs", c.total_epochs},
       {"stage_one_epochs", c.stage_one_epochs},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"teacher_checkpoint", c.teacher_checkpoint ? nlohmann::json(*c.teacher_checkpoint) : nlohmann::json(nullptr)},
       {"init_checkpoint", c.init_checkpoint ? nlohmann::json(*c.init_checkpoint) : nlohmann::json(nullptr)},
       {"student_arch", c.student_arch},
       {"teacher_arch", c.teacher_arch},
       {"init_from_teacher", c.init_from_teacher},
       {"separate_heads", c.separate_heads}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  try {
    c.method = method_from_string(j.value("method", to_string(d.method)));
    c.lambda = j.value("lambda", d.lambda);
    c.temperature = j.value("temperature", d.temperature);
    c.loss2_kind = loss2_kind_from_string(j.value("loss2_kind", to_string(d.loss2_kind)));
    c.schedule.start = j.value("lr_start", d.schedule.start);
    c.schedule.end = j.value("lr_end", d.schedule.end);
    c.schedule.ramp_epochs = j.value("schedule_epochs", d.schedule.ramp_epochs);
    c.finetune_schedule.reset();
    if (j.contains("finetune_schedule") && !j["finetune_schedule"].is_null()) {
      const auto& f = j["finetune_schedule"];
      c.finetune_schedule = LrSchedule{f.at("lr_start").get<double>(), f.at("lr_end").get<double>(),
                                       f.at("schedule_epochs").get<int>()};
    }
    c.total_epochs = j.value("total_epochs", d.total_epochs);
    c.stage_one_epochs = j.value("stage_one_epochs", d.stage_one_epochs);
    c.momentum = j.value("momentum", d.momentum);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.seed = j.value("seed", d.seed);
    c.teacher_checkpoint.reset();
    if (j.contains("teacher_checkpoint") && !j["teacher_checkpoint"].is_null())
      c.teacher_checkpoint = j["teacher_checkpoint"].get<std::string>();
    c.init_checkpoint.reset();
    if (j.contains("init_checkpoint") && !j["init_checkpoint"].is_null())
      c.init_checkpoint = j["init_checkpoint"].get<std::string>();
    c.student_arch = j.contains("student_arch") ? j["student_arch"].get<ArchSpec>() : d.student_arch;
    c.teacher_arch = j.contains("teacher_arch") ? j["teacher_arch"].get<ArchSpec>() : d.teacher_arch;
    c.init_from_teacher = j.value("init_from_teacher", d.init_from_teacher);
    c.separate_heads = j.value("separate_heads", d.separate_heads);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

double lr_at(int epoch, const TrainConfig& config) { return lr_at(epoch, config.schedule); }

const LrSchedule& phase_schedule(const TrainConfig& config, bool warm_start) {
  return warm_start && config.finetune_schedule ? *config.finetune_schedule : config.schedule;
}

// --- losses -----------------------------------------------------------------

Tensor smooth(Graph& g, const Tensor& p, double temperature) {
  CQD_REQUIRE(temperature > 0, "smooth: temperature must be positive");
  return ops::softmax(g, ops::scale(g, ops::log(g, p), static_cast<float>(1.0 / temperature)));
}

Tensor smooth_logits(Graph& g, const Tensor& logits, double temperature) {
  CQD_REQUIRE(temperature > 0, "smooth_logits: temperature must be positive");
  return ops::softmax(g, ops::scale(g, logits, static_cast<float>(1.0 / temperature)));
}

Tensor distill_loss(Graph& g, const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
                    Loss2Kind kind) {
  if (student_logits.shape() != teacher_logits.shape())
    throw ContractError("distill_loss: student " + shape_str(student_logits.shape()) + " vs teacher " +
                        shape_str(teacher_logits.shape()));
  CQD_REQUIRE(temperature > 0, "distill_loss: temperature must be positive");
  const Tensor teacher = teacher_logits.detach();
  if (kind == Loss2Kind::SquaredLogits) return ops::mse(g, student_logits, teacher);
  Graph scratch;
  const Tensor target = smooth_logits(scratch, teacher, temperature);
  return ops::softmax_cross_entropy(g, ops::scale(g, student_logits, static_cast<float>(1.0 / temperature)), target);
}

ObjectiveTerms cqd_objective(Graph& g, const Model& student, const Tensor& z_batch, std::span<const int> labels,
                             const Tensor& teacher_logits, const TrainConfig& config) {
  const std::size_t batch = z_batch.rank() > 0 ? z_batch.dim(0) : 0;
  if (batch == 0 || labels.size() != batch || teacher_logits.rank() != 2 || teacher_logits.dim(0) != batch)
    throw ContractError("cqd_objective: unpaired batch (" + std::to_string(batch) + " inputs, " +
                        std::to_string(labels.size()) + " labels, teacher " + shape_str(teacher_logits.shape()) + ")");
  const Tensor logits = student.forward(g, z_batch, true);
  const Tensor task = ops::softmax_cross_entropy(g, logits, ops::one_hot(labels, logits.dim(1)));
  ObjectiveTerms out;
  out.task = task.item();
  if (config.lambda == 0.0) {
    Graph scratch;
    out.distill =
        distill_loss(scratch, logits.detach(), teacher_logits, config.temperature, config.loss2_kind).item();
    out.total = task;
    return out;
  }
  const Tensor d = distill_loss(g, logits, teacher_logits, config.temperature, config.loss2_kind);
  out.distill = d.item();
  out.total = ops::add(g, task, ops::scale(g, d, static_cast<float>(config.lambda)));
  return out;
}

ObjectiveTerms cqd_objective(Graph& g, const Model& student, const Tensor& z_batch, std::span<const int> labels,
                             const Model& teacher, const Tensor& x_batch, const TrainConfig& config) {
  if (x_batch.rank() == 0 || z_batch.rank() == 0 || x_batch.dim(0) != z_batch.dim(0))
    throw ContractError("cqd_objective: x and z batches are not paired");
  Graph scratch;
  const Tensor t = teacher.forward(scratch, x_batch.detach(), false);
  return cqd_objective(g, student, z_batch, labels, t.detach(), config);
}

// --- evaluation -----------------------------------------------------------------

Tensor predict_logits(const Model& model, std::span<const Image* const> images, std::size_t batch) {
  CQD_REQUIRE(batch > 0, "predict_logits: batch must be positive");
  const std::size_t n = images.size();
  const auto k = static_cast<std::size_t>(model.num_classes());
  Tensor out({n, k});
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    Graph g;
    const Tensor logits = model.forward(g, to_batch(images.subspan(start, len)), false);
    std::copy(logits.data().begin(), logits.data().end(), out.data().begin() + start * k);
  }
  return out;
}

namespace {

double accuracy(const Model& model, std::span<const Image* const> images, std::span<const int> labels) {
  if (images.empty()) throw ContractError("evaluate: empty dataset");
  const auto pred = ops::argmax_rows(predict_logits(model, images));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<const Image*> view_images(const PairedDataset& data, View view) {
  std::vector<const Image*> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(view == View::HQ ? &s.x : &s.z);
  return out;
}

std::vector<int> paired_labels(const PairedDataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(s.y);
  return out;
}

}  // namespace

double evaluate(const Model& model, const LabeledDataset& data) {
  std::vector<const Image*> images;
  for (const auto& im : data.images) images.push_back(&im);
  return accuracy(model, images, data.labels);
}

double evaluate(const Model& model, const PairedDataset& data, View view) {
  return accuracy(model, view_images(data, view), paired_labels(data));
}

View target_view(Method m) { return m == Method::TrainA ? View::HQ : View::LQ; }

// --- training -----------------------------------------------------------------

void to_json(nlohmann::json& j, const TrainReport& r) {
  auto epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"phase", e.phase},
                      {"lr", e.lr},
                      {"task_loss", e.task_loss},
                      {"distill_loss", e.distill_loss},
                      {"eval_accuracy", e.eval_accuracy ? nlohmann::json(*e.eval_accuracy) : nlohmann::json(nullptr)}});
  }
  j = {{"schema_version", kTrainReportVersion},
       {"config", r.config},
       {"epochs", epochs},
       {"final_accuracy", r.final_accuracy},
       {"wall_seconds", r.wall_seconds},
       {"seed", r.seed},
       {"steps", r.steps}};
}

void from_json(const nlohmann::json& j, TrainReport& r) {
  if (j.value("schema_version", 0) != kTrainReportVersion)
    throw VersionError("train report schema version " + std::to_string(j.value("schema_version", 0)) +
                       " is not supported");
  r.config = j.at("config").get<TrainConfig>();
  r.epochs.clear();
  for (const auto& e : j.at("epochs")) {
    EpochRecord rec;
    rec.epoch = e.at("epoch");
    rec.phase = e.at("phase");
    rec.lr = e.at("lr");
    rec.task_loss = e.at("task_loss");
    rec.distill_loss = e.at("distill_loss");
    if (!e.at("eval_accuracy").is_null()) rec.eval_accuracy = e.at("eval_accuracy").get<double>();
    r.epochs.push_back(rec);
  }
  r.final_accuracy = j.at("final_accuracy");
  r.wall_seconds = j.at("wall_seconds");
  r.seed = j.at("seed");
  r.steps = j.at("steps");
}

namespace {

enum class Phase { X, Z, XZ };

const char* phase_name(Phase p) { return p == Phase::X ? "x" : (p == Phase::Z ? "z" : "xz"); }

// One element of an epoch: sample index and which view it is drawn from.
struct Item {
  std::uint32_t index;
  bool hq;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, const PairedDataset& data, const TrainOptions& options, TrainReport& report)
      : cfg_(config), data_(data), opt_(options), report_(report) {}

  // Runs `epochs` epochs of one phase on `model`. `teacher_logits` enables the
  // distill term (z phase only); `head_a` holds the x-domain classifier when
  // heads are separate.
  void run(Model& model, Phase phase, int epochs, const LrSchedule& schedule, const Tensor* teacher_logits,
           std::vector<Tensor>* head_a) {
    const std::size_t n = data_.size();
    std::vector<Item> items;
    if (phase != Phase::Z)
      for (std::size_t i = 0; i < n; ++i) items.push_back({static_cast<std::uint32_t>(i), true});
    if (phase != Phase::X)
      for (std::size_t i = 0; i < n; ++i) items.push_back({static_cast<std::uint32_t>(i), false});

    SgdState sgd;
    sgd.momentum = static_cast<float>(cfg_.momentum);
    sgd.weight_decay = static_cast<float>(cfg_.weight_decay);
    std::vector<Tensor> params = model.params();
    if (head_a) params.insert(params.end(), head_a->begin(), head_a->end());

    const std::uint64_t phase_seed = derive_seed(cfg_.seed, static_cast<std::uint64_t>(phase) + 1);
    const auto batch = static_cast<std::size_t>(cfg_.batch_size);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      sgd.lr = static_cast<float>(lr_at(epoch, schedule));
      std::mt19937_64 rng(derive_seed(phase_seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(items.begin(), items.end(), rng);
      double task_sum = 0.0, distill_sum = 0.0;
      std::size_t seen = 0;
      for (std::size_t start = 0; start < items.size(); start += batch) {
        const std::size_t len = std::min(batch, items.size() - start);
        const std::span<const Item> chunk(items.data() + start, len);
        for (auto& p : params) p.zero_grad();
        Graph g;
        const auto [loss, task, distill] = step_loss(g, model, chunk, teacher_logits, head_a);
        if (!std::isfinite(loss.item()) || !std::isfinite(task) || !std::isfinite(distill))
          throw NumericError("training diverged: method " + to_string(cfg_.method) + ", phase " + phase_name(phase) +
                             ", epoch " + std::to_string(epoch) + ", step " + std::to_string(report_.steps) +
                             ", lr " + std::to_string(sgd.lr) + ", task " + std::to_string(task) + ", distill " +
                             std::to_string(distill));
        Tensor l = loss;
        g.backward(l);
        sgd_step(params, sgd);
        task_sum += task * static_cast<double>(len);
        distill_sum += distill * static_cast<double>(len);
        seen += len;
        ++report_.steps;
        if (opt_.on_step) opt_.on_step(report_.steps, model);
      }
      EpochRecord rec;
      rec.epoch = static_cast<int>(report_.epochs.size());
      rec.phase = phase_name(phase);
      rec.lr = sgd.lr;
      rec.task_loss = seen ? task_sum / static_cast<double>(seen) : 0.0;
      rec.distill_loss = seen ? distill_sum / static_cast<double>(seen) : 0.0;
      if (opt_.eval && opt_.eval_every > 0 && ((epoch + 1) % opt_.eval_every == 0 || epoch + 1 == epochs))
        rec.eval_accuracy = evaluate(model, *opt_.eval, target_view(cfg_.method));
      report_.epochs.push_back(rec);
    }
  }

 private:
  std::tuple<Tensor, double, double> step_loss(Graph& g, const Model& model, std::span<const Item> chunk,
                                               const Tensor* teacher_logits, std::vector<Tensor>* head_a) {
    const std::size_t len = chunk.size();
    std::vector<const Image*> hq, lq;
    std::vector<int> y_hq, y_lq;
    std::vector<std::uint32_t> idx_lq;
    for (const Item& it : chunk) {
      const PairedSample& s = data_.samples[it.index];
      if (it.hq) {
        hq.push_back(&s.x);
        y_hq.push_back(s.y);
      } else {
        lq.push_back(&s.z);
        y_lq.push_back(s.y);
        idx_lq.push_back(it.index);
      }
    }
    if (teacher_logits) {
      const std::size_t k = teacher_logits->dim(1);
      Tensor t({len, k});
      for (std::size_t r = 0; r < len; ++r)
        std::copy_n(teacher_logits->data().begin() + static_cast<std::ptrdiff_t>(idx_lq[r] * k), k,
                    t.data().begin() + static_cast<std::ptrdiff_t>(r * k));
      auto terms = cqd_objective(g, model, to_batch(lq), y_lq, t, cfg_);
      return {terms.total, terms.task, terms.distill};
    }
    // Plain cross-entropy, one forward per view present in the batch; each
    // view's mean is weighted by its share of the batch.
    Tensor total;
    double task = 0.0;
    auto add_view = [&](const std::vector<const Image*>& images, const std::vector<int>& labels, bool use_head_a) {
      if (images.empty()) return;
      const Tensor x = to_batch(images);
      Tensor logits;
      if (use_head_a) {
        const Tensor h = model.features(g, x, true);
        logits = ops::linear(g, h, (*head_a)[0], (*head_a)[1]);
      } else {
        logits = model.forward(g, x, true);
      }
      Tensor ce = ops::softmax_cross_entropy(g, logits, ops::one_hot(labels, logits.dim(1)));
      const double share = static_cast<double>(images.size()) / static_cast<double>(len);
      task += ce.item() * share;
      if (share != 1.0) ce = ops::scale(g, ce, static_cast<float>(share));
      total = total.defined() ? ops::add(g, total, ce) : ce;
    };
    add_view(hq, y_hq, head_a != nullptr);
    add_view(lq, y_lq, false);
    return {total, task, 0.0};
  }

  const TrainConfig& cfg_;
  const PairedDataset& data_;
  const TrainOptions& opt_;
  TrainReport& report_;
};

Model resolve_teacher(const TrainConfig& cfg, const TrainOptions& opt, const char* why) {
  if (opt.teacher) return *opt.teacher;
  if (cfg.teacher_checkpoint) return load_checkpoint(*cfg.teacher_checkpoint);
  throw ConfigError(std::string(why) + " needs a teacher model (teacher_checkpoint is not set)");
}

// Pretrained model with a fresh classifier, or a random model when no init is given.
Model initial_model(const TrainConfig& cfg, const TrainOptions& opt, int k) {
  std::optional<Model> loaded;
  const Model* init = opt.init;
  if (!init && cfg.init_checkpoint) init = &loaded.emplace(load_checkpoint(*cfg.init_checkpoint));
  if (!init) return build_model(cfg.student_arch, k, cfg.seed);
  if (!(init->arch() == cfg.student_arch))
    throw ConfigError("init model architecture '" + init->arch().name + "' does not match student_arch '" +
                      cfg.student_arch.name + "'");
  return reinit_classifier(*init, k, cfg.seed);
}

}  // namespace

TrainResult train(const TrainConfig& config, const PairedDataset& paired, const TrainOptions& options) {
  config.validate();
  if (paired.size() == 0) throw ContractError("train: empty paired dataset");
  const auto start_time = std::chrono::steady_clock::now();
  const int k = paired.num_classes;
  for (const auto& s : paired.samples)
    if (s.y < 0 || s.y >= k) throw ContractError("train: label out of range");

  TrainResult result;
  TrainReport& report = result.report;
  report.config = config;
  report.seed = config.seed;
  Trainer trainer(config, paired, options, report);
  const LrSchedule& cold = config.schedule;

  switch (config.method) {
    case Method::TrainA:
      result.model = initial_model(config, options, k);
      trainer.run(result.model, Phase::X, config.total_epochs, cold, nullptr, nullptr);
      break;
    case Method::TrainB:
      result.model = initial_model(config, options, k);
      trainer.run(result.model, Phase::Z, config.total_epochs, cold, nullptr, nullptr);
      break;
    case Method::TrainAB: {
      result.model = initial_model(config, options, k);
      if (config.separate_heads) {
        const Model other = reinit_classifier(result.model, k, derive_seed(config.seed, 0xA));
        std::vector<Tensor> head_a;
        for (std::size_t i = other.classifier_offset(); i < other.params().size(); ++i) {
          Tensor t = other.params()[i].clone();
          t.set_requires_grad(true);
          head_a.push_back(t);
        }
        trainer.run(result.model, Phase::XZ, config.total_epochs, cold, nullptr, &head_a);
      } else {
        trainer.run(result.model, Phase::XZ, config.total_epochs, cold, nullptr, nullptr);
      }
      break;
    }
    case Method::Staged: {
      if (options.teacher || config.teacher_checkpoint) {
        result.model = resolve_teacher(config, options, "Staged");
        if (!(result.model.arch() == config.student_arch) || result.model.num_classes() != k)
          throw ConfigError("Staged: stage-one model does not match the student architecture");
      } else {
        result.model = initial_model(config, options, k);
        trainer.run(result.model, Phase::X, config.stage_one_epochs, cold, nullptr, nullptr);
      }
      trainer.run(result.model, Phase::Z, config.total_epochs, phase_schedule(config, true), nullptr, nullptr);
      break;
    }
    case Method::CQD: {
      const Model teacher = resolve_teacher(config, options, "CQD");
      if (!(teacher.arch() == config.teacher_arch))
        throw ConfigError("CQD: teacher architecture '" + teacher.arch().name + "' does not match teacher_arch '" +
                          config.teacher_arch.name + "'");
      if (teacher.num_classes() != k) throw ConfigError("CQD: teacher class count does not match the data");
      std::vector<const Image*> xs;
      for (const auto& s : paired.samples) xs.push_back(&s.x);
      const Tensor teacher_logits = predict_logits(teacher, xs);
      const bool warm = config.init_from_teacher && config.student_arch == config.teacher_arch;
      result.model = warm ? teacher : initial_model(config, options, k);
      trainer.run(result.model, Phase::Z, config.total_epochs, phase_schedule(config, warm), &teacher_logits,
                  nullptr);
      break;
    }
  }

  if (options.eval) report.final_accuracy = evaluate(result.model, *options.eval, target_view(config.method));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return result;
}

}  // namespace cqd
