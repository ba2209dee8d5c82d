#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/dataset.hpp"
#include "cqd/nets.hpp"
#include "cqd/optim.hpp"

namespace cqd {

enum class Method { TrainA, TrainB, TrainAB, Staged, CQD };
enum class Loss2Kind { SmoothedCE, SquaredLogits };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(Loss2Kind k);
Loss2Kind loss2_kind_from_string(const std::string& s);

struct TrainConfig {
  Method method = Method::CQD;
  double lambda = 200.0;
  double temperature = 10.0;
  Loss2Kind loss2_kind = Loss2Kind::SmoothedCE;
  LrSchedule schedule;
  /// Schedule for phases that start from a trained model (Staged stage two,
  /// CQD initialized from the teacher); `schedule` when unset.
  std::optional<LrSchedule> finetune_schedule;
  int total_epochs = 30;
  /// Staged only: epochs on the x-view before switching to z (skipped when a
  /// warm-start teacher is handed to train()).
  int stage_one_epochs = 30;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int batch_size = 64;
  std::uint64_t seed = 0;
  std::optional<std::string> teacher_checkpoint;
  /// Pretrained starting point for models not initialized from the teacher;
  /// its classifier is replaced by a fresh K-way layer.
  std::optional<std::string> init_checkpoint;
  ArchSpec student_arch = ArchSpec::shallow();
  ArchSpec teacher_arch = ArchSpec::shallow();
  /// CQD: start the student from the teacher when the architectures match.
  bool init_from_teacher = true;
  /// TrainAB: one classifier per domain during training; the z-domain head is kept.
  bool separate_heads = false;

  /// Throws ConfigError on invalid values or method/arch combinations.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

double lr_at(int epoch, const TrainConfig& config);
/// Schedule of a phase, by whether it starts from a trained model.
const LrSchedule& phase_schedule(const TrainConfig& config, bool warm_start);

// --- losses -----------------------------------------------------------------

/// Row-wise softmax(log(max(p, ε)) / T), evaluated literally on probabilities.
Tensor smooth(Graph& g, const Tensor& p, double temperature);
/// smooth(softmax(z), T) in logit form: softmax((z − logsumexp z) / T) = softmax(z / T).
Tensor smooth_logits(Graph& g, const Tensor& logits, double temperature);

/// Cross-entropy between the smoothed student and smoothed teacher
/// distributions (or the mean squared logit difference). The teacher logits
/// are read as constants.
Tensor distill_loss(Graph& g, const Tensor& student_logits, const Tensor& teacher_logits, double temperature,
                    Loss2Kind kind = Loss2Kind::SmoothedCE);

struct ObjectiveTerms {
  Tensor total;  ///< task + λ·distill, differentiable
  double task = 0.0;
  double distill = 0.0;
};

/// Batch-mean task cross-entropy on g(z) plus λ times the batch-mean distill
/// term against precomputed teacher logits for the paired x. λ = 0 leaves the
/// distill term out of the graph entirely.
ObjectiveTerms cqd_objective(Graph& g, const Model& student, const Tensor& z_batch, std::span<const int> labels,
                             const Tensor& teacher_logits, const TrainConfig& config);
/// Same, running the frozen teacher on the paired x batch.
ObjectiveTerms cqd_objective(Graph& g, const Model& student, const Tensor& z_batch, std::span<const int> labels,
                             const Model& teacher, const Tensor& x_batch, const TrainConfig& config);

// --- training -----------------------------------------------------------------

inline constexpr int kTrainReportVersion = 1;

struct EpochRecord {
  int epoch = 0;
  std::string phase;  ///< "x", "z", "xz"
  double lr = 0.0;
  double task_loss = 0.0;
  double distill_loss = 0.0;
  std::optional<double> eval_accuracy;
};

struct TrainReport {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  double final_accuracy = -1.0;  ///< on the eval set, < 0 when none was given
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
};

void to_json(nlohmann::json& j, const TrainReport& r);
void from_json(const nlohmann::json& j, TrainReport& r);

struct TrainOptions {
  /// Teacher for CQD, or the stage-one model for Staged. Falls back to
  /// config.teacher_checkpoint when null.
  const Model* teacher = nullptr;
  /// Pretrained starting point (overrides config.init_checkpoint). Must match
  /// the architecture of the model being trained.
  const Model* init = nullptr;
  /// Evaluated after each epoch in the view the method targets.
  const PairedDataset* eval = nullptr;
  /// Epoch interval for eval_accuracy; 0 evaluates only the final model.
  int eval_every = 1;
  /// Called after every optimizer step.
  std::function<void(std::size_t step, const Model& model)> on_step;
};

struct TrainResult {
  Model model;
  TrainReport report;
};

/// Runs one of the five methods. Deterministic per config. Aborts with
/// NumericError when a loss becomes non-finite.
TrainResult train(const TrainConfig& config, const PairedDataset& paired, const TrainOptions& options = {});

/// The view a method's model is meant to be tested on.
View target_view(Method m);

/// Logits [N×K] for every image of a view, computed in batches.
Tensor predict_logits(const Model& model, std::span<const Image* const> images, std::size_t batch = 128);

/// Fraction of argmax-correct predictions (ties to the lowest class index).
double evaluate(const Model& model, const LabeledDataset& data);
double evaluate(const Model& model, const PairedDataset& data, View view);

}  // namespace cqd
