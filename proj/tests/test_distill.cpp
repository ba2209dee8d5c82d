#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cqd/data.hpp"
#include "cqd/distill.hpp"
#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/ops.hpp"
#include "gradcheck.hpp"

using namespace cqd;
using namespace cqd::testing;
namespace fs = std::filesystem;

namespace {

PairedDataset tiny_paired(std::uint64_t seed = 1, int per_class = 12) {
  ShapesConfig c;
  c.num_classes = 4;
  c.samples_per_class = per_class;
  c.side = 32;
  c.seed = seed;
  TransformSpec t;
  t.kind = TransformKind::LowRes;
  t.lowres_size = 8;
  return make_paired(gen_shapes(c), t, seed);
}

TrainConfig tiny_config(Method m) {
  TrainConfig c;
  c.method = m;
  c.student_arch = ArchSpec::shallow(32);
  c.teacher_arch = ArchSpec::shallow(32);
  c.schedule = {0.01, 0.001, 4};
  c.total_epochs = 4;
  c.stage_one_epochs = 2;
  c.batch_size = 16;
  c.seed = 3;
  c.lambda = 5;
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t k = t.dim(1);
  return {t.data().begin() + r * k, t.data().begin() + (r + 1) * k};
}

}  // namespace

TEST_CASE("smoothing values") {
  Graph g;
  const Tensor p({1, 2}, std::vector<float>{0.9f, 0.1f});
  const Tensor s = smooth(g, p, 10.0);
  CHECK(s.data()[0] == doctest::Approx(0.554707).epsilon(1e-5));
  CHECK(s.data()[1] == doctest::Approx(0.445293).epsilon(1e-5));

  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Tensor q = random_simplex(3, 6, rng);
    const Tensor same = smooth(g, q, 1.0);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(std::abs(same.data()[i] - q.data()[i]) < 1e-6);
  }
}

TEST_CASE("logit and literal smoothing agree") {
  std::mt19937_64 rng(8);
  for (double temperature : {0.5, 1.0, 4.0, 10.0}) {
    for (int t = 0; t < 20; ++t) {
      const Tensor z = random_tensor({4, 5}, rng, -4, 4);
      Graph g;
      const Tensor a = smooth_logits(g, z, temperature);
      const Tensor b = smooth(g, ops::softmax(g, z), temperature);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-6);
    }
  }
}

TEST_CASE("smoothing preserves the argmax") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 200; ++t) {
    const Tensor p = random_simplex(1, 7, rng);
    Graph g;
    for (double temperature : {0.3, 1.0, 10.0, 100.0})
      CHECK(ops::argmax_rows(smooth(g, p, temperature)) == ops::argmax_rows(p));
  }
}

TEST_CASE("distillation at T = 1 is plain cross-entropy") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 50; ++t) {
    const Tensor s = random_tensor({3, 5}, rng, -3, 3), te = random_tensor({3, 5}, rng, -3, 3);
    Graph g;
    const double d = distill_loss(g, s, te, 1.0).item();
    const double ce = ops::cross_entropy(g, ops::softmax(g, s), ops::softmax(g, te)).item();
    CHECK(std::abs(d - ce) < 1e-6);
  }
}

TEST_CASE("distillation equals cross-entropy of the smoothed distributions") {
  std::mt19937_64 rng(14);
  const Tensor s = random_tensor({2, 4}, rng, -3, 3), te = random_tensor({2, 4}, rng, -3, 3);
  Graph g;
  const double d = distill_loss(g, s, te, 10.0).item();
  const double ref =
      ops::cross_entropy(g, smooth(g, ops::softmax(g, s), 10.0), smooth(g, ops::softmax(g, te), 10.0)).item();
  CHECK(d == doctest::Approx(ref).epsilon(1e-6));
  const double sq = distill_loss(g, s, te, 10.0, Loss2Kind::SquaredLogits).item();
  CHECK(sq == doctest::Approx(ops::mse(g, s, te).item()));
  CHECK_THROWS_AS(distill_loss(g, s, random_tensor({2, 3}, rng), 1.0), ContractError);
}

TEST_CASE("distillation gradients") {
  std::mt19937_64 rng(15);
  for (const auto& c : distill_cases()) {
    double worst = 0, forward = 0;
    for (int t = 0; t < 100; ++t) {
      double f = 0;
      worst = std::max(worst, c.check(rng, &f));
      forward = std::max(forward, f);
    }
    INFO(c.name << " worst " << worst << " forward " << forward);
    CHECK(worst < 1e-3);
    CHECK(forward < 1e-5);
  }

  // Vanishes at matching logits, and only there.
  const Tensor z = random_tensor({2, 4}, rng);
  Tensor s = z.clone();
  s.set_requires_grad(true);
  Graph g;
  Tensor loss = distill_loss(g, s, z, 10.0);
  g.backward(loss);
  for (float v : s.grad()) CHECK(std::abs(v) < 1e-7);
  Tensor s2 = random_tensor({2, 4}, rng);
  s2.set_requires_grad(true);
  Graph g2;
  Tensor loss2 = distill_loss(g2, s2, z, 10.0);
  g2.backward(loss2);
  double norm = 0;
  for (float v : s2.grad()) norm += double(v) * v;
  CHECK(norm > 1e-10);
  // The teacher never receives a gradient.
  Tensor t = z.clone();
  t.set_requires_grad(true);
  Graph g3;
  Tensor loss3 = distill_loss(g3, s2, t, 10.0);
  g3.backward(loss3);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("objective composition") {
  const auto data = tiny_paired();
  const Model student = build_model(ArchSpec::shallow(32), 4, 1);
  const Model teacher = build_model(ArchSpec::shallow(32), 4, 2);
  std::vector<const Image*> xs, zs;
  std::vector<int> ys;
  for (std::size_t i = 0; i < 8; ++i) {
    xs.push_back(&data.samples[i].x);
    zs.push_back(&data.samples[i].z);
    ys.push_back(data.samples[i].y);
  }
  const Tensor x = to_batch(xs), z = to_batch(zs);
  TrainConfig cfg = tiny_config(Method::CQD);
  cfg.lambda = 3;
  Graph g;
  const auto terms = cqd_objective(g, student, z, ys, teacher, x, cfg);
  CHECK(terms.total.item() == doctest::Approx(terms.task + 3 * terms.distill).epsilon(1e-5));
  Graph ref;
  const Tensor zl = student.forward(ref, z);
  CHECK(terms.task == doctest::Approx(ops::softmax_cross_entropy(ref, zl, ops::one_hot(ys, 4)).item()).epsilon(1e-6));

  cfg.lambda = 0;
  Graph g0;
  const auto zero = cqd_objective(g0, student, z, ys, teacher, x, cfg);
  CHECK(zero.total.item() == static_cast<float>(zero.task));
  CHECK(zero.distill > 0);

  std::vector<int> short_labels(ys.begin(), ys.begin() + 4);
  Graph g1;
  CHECK_THROWS_AS(cqd_objective(g1, student, z, short_labels, teacher, x, cfg), ContractError);
}

TEST_CASE("CQD with lambda 0 retraces TrainB exactly") {
  const auto data = tiny_paired(2, 12);
  const Model teacher = build_model(ArchSpec::shallow(32), 4, 99);
  auto trajectory = [&](Method m) {
    TrainConfig c = tiny_config(m);
    c.lambda = 0;
    c.init_from_teacher = false;
    c.total_epochs = 34;  // 3 steps per epoch
    std::vector<std::string> hashes;
    TrainOptions o;
    o.teacher = &teacher;
    o.on_step = [&](std::size_t, const Model& model) {
      std::string blob;
      for (const auto& p : model.params()) blob += sha256_hex(p.data());
      hashes.push_back(sha256_hex(blob));
    };
    train(c, data, o);
    return hashes;
  };
  const auto b = trajectory(Method::TrainB);
  const auto cqd = trajectory(Method::CQD);
  CHECK(b.size() >= 100);
  CHECK(b == cqd);
}

TEST_CASE("training is deterministic and leaves the teacher untouched") {
  const auto data = tiny_paired(3);
  const Model teacher = build_model(ArchSpec::shallow(32), 4, 5);
  const Model before = teacher;
  TrainOptions o;
  o.teacher = &teacher;
  for (Method m : {Method::TrainA, Method::TrainB, Method::TrainAB, Method::Staged, Method::CQD}) {
    const auto a = train(tiny_config(m), data, o);
    const auto b = train(tiny_config(m), data, o);
    CHECK(params_bit_equal(a.model, b.model));
    CHECK(a.report.epochs.size() >= 4);
  }
  CHECK(params_bit_equal(teacher, before));

  TrainConfig sep = tiny_config(Method::TrainAB);
  sep.separate_heads = true;
  const auto s = train(sep, data);
  CHECK_FALSE(params_bit_equal(s.model, train(tiny_config(Method::TrainAB), data).model));
}

TEST_CASE("training from a pretrained model and a fine-tuning schedule") {
  const auto data = tiny_paired(4);
  const Model pre = build_model(ArchSpec::shallow(32), 7, 11);
  TrainOptions o;
  o.init = &pre;
  TrainConfig c = tiny_config(Method::TrainB);
  c.total_epochs = 0;
  const auto r = train(c, data, o);
  CHECK(r.model.num_classes() == 4);
  CHECK(params_bit_equal(r.model, reinit_classifier(pre, 4, c.seed)));

  const Model wrong = build_model(ArchSpec::deep(32), 7, 11);
  o.init = &wrong;
  CHECK_THROWS_AS(train(c, data, o), ConfigError);

  TrainConfig f = tiny_config(Method::CQD);
  f.finetune_schedule = LrSchedule{0.002, 0.002, 0};
  const Model teacher = build_model(ArchSpec::shallow(32), 4, 5);
  TrainOptions ot;
  ot.teacher = &teacher;
  const auto fr = train(f, data, ot);
  for (const auto& e : fr.report.epochs) CHECK(e.lr == doctest::Approx(0.002));
  CHECK(&phase_schedule(f, false) == &f.schedule);
}

TEST_CASE("training errors") {
  const auto data = tiny_paired(5);
  CHECK_THROWS_AS(train(tiny_config(Method::CQD), data), ConfigError);
  TrainConfig staged = tiny_config(Method::Staged);
  staged.teacher_arch = ArchSpec::deep(32);
  CHECK_THROWS_AS(train(staged, data), ConfigError);
  TrainConfig bad = tiny_config(Method::TrainB);
  bad.temperature = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config(Method::TrainB);
  bad.schedule = {1e30, 1e30, 0};
  CHECK_THROWS_AS(train(bad, data), NumericError);
  CHECK_THROWS_AS(train(tiny_config(Method::TrainB), PairedDataset{}), ContractError);
  CHECK_THROWS_AS(method_from_string("TrainC"), ConfigError);
  const Model m = build_model(ArchSpec::shallow(32), 4, 0);
  CHECK_THROWS_AS(evaluate(m, LabeledDataset{}), ContractError);

  const auto dir = fs::temp_directory_path() / "cqd_test_distill";
  fs::create_directories(dir);
  save_checkpoint(build_model(ArchSpec::shallow(32), 3, 0), dir / "k3.ckpt");
  TrainConfig cq = tiny_config(Method::CQD);
  cq.teacher_checkpoint = (dir / "k3.ckpt").string();
  CHECK_THROWS_AS(train(cq, data), ConfigError);
}

TEST_CASE("config and report serialization") {
  TrainConfig c = tiny_config(Method::Staged);
  c.finetune_schedule = LrSchedule{0.1, 0.01, 3};
  c.init_checkpoint = "pre.ckpt";
  c.loss2_kind = Loss2Kind::SquaredLogits;
  nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);

  TrainReport r;
  r.config = c;
  r.epochs.push_back({0, "z", 0.1, 1.5, 0.2, 0.5});
  r.final_accuracy = 0.5;
  nlohmann::json rj = r;
  CHECK(rj["schema_version"] == kTrainReportVersion);
  CHECK(nlohmann::json(rj.get<TrainReport>()) == rj);
  rj["schema_version"] = 7;
  CHECK_THROWS_AS(rj.get<TrainReport>(), VersionError);
}

TEST_CASE("evaluation counts ties toward the lowest class") {
  const auto data = tiny_paired(6);
  Model m = build_model(ArchSpec::shallow(32), 4, 0);
  for (auto& p : m.params()) std::fill(p.data().begin(), p.data().end(), 0.0f);
  // All logits tie, so every prediction is class 0.
  const auto view = view_of(data, View::LQ);
  std::size_t zeros = 0;
  for (int y : view.labels) zeros += y == 0;
  CHECK(evaluate(m, view) == doctest::Approx(double(zeros) / view.size()));
  CHECK(target_view(Method::TrainA) == View::HQ);
  CHECK(target_view(Method::CQD) == View::LQ);
  (void)row;
}
