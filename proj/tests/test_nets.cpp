#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/nets.hpp"

using namespace cqd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cqd_test_nets_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string corrupt(const std::string& bytes, std::size_t pos, char value) {
  std::string out = bytes;
  out[pos] = value;
  return out;
}

}  // namespace

TEST_CASE("architectures") {
  const auto s = ArchSpec::shallow(64);
  const auto d = ArchSpec::deep(64);
  CHECK(build_model(d, 10, 0).parameter_count() > build_model(s, 10, 0).parameter_count());
  CHECK(d.blocks.size() > s.blocks.size());
  const auto f = s.feature_shape();
  CHECK(f.h >= 1);
  CHECK(f.c == 32);
  ArchSpec tiny = ArchSpec::shallow(4);
  CHECK_THROWS_AS(tiny.feature_shape(), ContractError);
  nlohmann::json j = d;
  CHECK(j.get<ArchSpec>() == d);
}

TEST_CASE("build_model is deterministic and shaped") {
  const auto arch = ArchSpec::shallow(32);
  const Model a = build_model(arch, 5, 7), b = build_model(arch, 5, 7), c = build_model(arch, 5, 8);
  CHECK(params_bit_equal(a, b));
  CHECK_FALSE(params_bit_equal(a, c));
  Graph g;
  const Tensor y = a.forward(g, Tensor({3, 3, 32, 32}, 0.5f));
  CHECK(y.shape() == Shape{3, 5});
  CHECK_THROWS_AS(a.forward(g, Tensor({1, 3, 16, 16})), ContractError);
  CHECK_THROWS_AS(build_model(arch, 1, 0), ContractError);
}

TEST_CASE("initial logits are centred") {
  const auto arch = ArchSpec::shallow(32);
  const Model m = build_model(arch, 4, 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor x({1000, 3, 32, 32});
  for (float& v : x.data()) v = u(rng);
  Graph g;
  const Tensor z = m.forward(g, x);
  // Per-class means over random inputs must be small next to the logit spread.
  double mean_all = 0, sq = 0;
  for (float v : z.data()) {
    mean_all += v;
    sq += static_cast<double>(v) * v;
  }
  mean_all /= static_cast<double>(z.size());
  const double rms = std::sqrt(sq / static_cast<double>(z.size()));
  CHECK(std::isfinite(rms));
  CHECK(std::abs(mean_all) < 3 * rms);
  // Biases start at zero, so an all-zero input gives exactly zero logits.
  const Tensor z0 = m.forward(g, Tensor({1, 3, 32, 32}));
  for (float v : z0.data()) CHECK(v == 0.0f);
}

TEST_CASE("reinit_classifier keeps the backbone") {
  const Model m = build_model(ArchSpec::shallow(32), 5, 1);
  const Model r = reinit_classifier(m, 3, 9);
  CHECK(r.num_classes() == 3);
  for (std::size_t i = 0; i < m.classifier_offset(); ++i) {
    const auto a = m.params()[i].data(), b = r.params()[i].data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  CHECK(r.params()[r.classifier_offset()].shape() == Shape{3, 64});
  const Model again = reinit_classifier(m, 5, 1);
  CHECK_FALSE(params_bit_equal(again, m));
}

TEST_CASE("model copies are deep") {
  Model a = build_model(ArchSpec::shallow(32), 3, 2);
  Model b = a;
  b.params()[0].data()[0] += 1.0f;
  CHECK_FALSE(params_bit_equal(a, b));
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = scratch_dir("roundtrip");
  const Model m = build_model(ArchSpec::deep(32), 6, 4);
  save_checkpoint(m, dir / "m.ckpt");
  const Model back = load_checkpoint(dir / "m.ckpt");
  CHECK(params_bit_equal(m, back));
  CHECK(back.arch() == m.arch());
  CHECK(back.num_classes() == 6);
  CHECK(back.seed() == 4);
}

TEST_CASE("damaged checkpoints raise distinct errors") {
  const auto dir = scratch_dir("damaged");
  save_checkpoint(build_model(ArchSpec::shallow(32), 3, 0), dir / "ok.ckpt");
  const std::string good = read_file(dir / "ok.ckpt");
  auto load_bytes = [&](const std::string& bytes) {
    write_file_atomic(dir / "bad.ckpt", bytes);
    return load_checkpoint(dir / "bad.ckpt");
  };
  CHECK_THROWS_AS(load_bytes(corrupt(good, 0, 'X')), FormatError);
  CHECK_THROWS_AS(load_bytes(corrupt(good, 4, 9)), VersionError);
  CHECK_THROWS_AS(load_bytes(good.substr(0, good.size() - 5)), TruncatedError);
  CHECK_THROWS_AS(load_bytes(good.substr(0, 2)), TruncatedError);
  CHECK_THROWS_AS(load_bytes(good + "xyz"), PayloadLengthError);
  CHECK_THROWS_AS(load_bytes(corrupt(good, 10, '!')), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}
