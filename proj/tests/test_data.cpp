#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>

#include "cqd/data.hpp"
#include "cqd/errors.hpp"
#include "cqd/io.hpp"

using namespace cqd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cqd_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ShapesConfig small_config() {
  ShapesConfig c;
  c.num_classes = 4;
  c.samples_per_class = 6;
  c.side = 32;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("shapes config validation") {
  ShapesConfig c;
  CHECK_NOTHROW(c.validate());
  c.scale_min = 0.1;  // 6.4 px at side 64
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ShapesConfig{};
  c.side = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ShapesConfig{};
  c.scale_max = 1.2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ShapesConfig{};
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  nlohmann::json j = small_config();
  CHECK(j.get<ShapesConfig>().side == 32);
}

TEST_CASE("rendered boxes are the exact object extent") {
  const ShapesConfig c = small_config();
  for (int label = 0; label < c.num_classes; ++label) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = render_shape(c, label, seed);
      const Box& b = r.box;
      REQUIRE(b.valid_for(c.side, c.side));
      bool top = false, bottom = false, left = false, right = false;
      double mass = 0;
      for (int y = 0; y < c.side; ++y)
        for (int x = 0; x < c.side; ++x) {
          const float cov = r.coverage[static_cast<std::size_t>(y) * c.side + x];
          if (cov > 0) {
            CHECK(b.contains(x, y));
            top |= y == b.y0, bottom |= y == b.y1 - 1, left |= x == b.x0, right |= x == b.x1 - 1;
          }
          mass += cov;
        }
      CHECK((top && bottom && left && right));
      // Regular n-gon of circumradius R has area n/2 R² sin(2π/n).
      const int n = 3 + (label / 2) % 4;
      const double k = 0.5 * n * std::sin(2 * std::numbers::pi / n);
      const double r_min = 0.5 * c.scale_min * c.side, r_max = 0.5 * c.scale_max * c.side;
      CHECK(mass >= k * r_min * r_min * 0.97);
      CHECK(mass <= k * r_max * r_max * 1.03);
    }
  }
}

TEST_CASE("gen_shapes is balanced, bounded and deterministic") {
  const ShapesConfig c = small_config();
  const auto a = gen_shapes(c);
  const auto b = gen_shapes(c);
  CHECK(a.size() == 24);
  CHECK(dataset_hash(a) == dataset_hash(b));
  std::map<int, int> counts;
  for (int y : a.labels) ++counts[y];
  for (const auto& [label, n] : counts) CHECK(n == 6);
  for (const auto& img : a.images)
    for (float v : img.pixels) CHECK((v >= 0.0f && v <= 1.0f));
  for (const auto& box : a.boxes) CHECK(box.has_value());
  ShapesConfig other = c;
  other.seed = 6;
  CHECK(dataset_hash(gen_shapes(other)) != dataset_hash(a));
  // Sample i only depends on its own derived seed.
  CHECK(a.images[7] == render_shape(c, 7 % 4, derive_seed(c.seed, 7)).image);
}

TEST_CASE("stratified split") {
  ShapesConfig c = small_config();
  c.samples_per_class = 10;
  const auto data = gen_shapes(c);
  const auto s = split(data, {0.6, 0.2, 0.2}, 3);
  CHECK(s.train.size() == 24);
  CHECK(s.val.size() == 8);
  CHECK(s.test.size() == 8);
  std::map<int, int> train_counts;
  for (int y : s.train.labels) ++train_counts[y];
  for (const auto& [label, n] : train_counts) CHECK(n == 6);
  CHECK(dataset_hash(split(data, {0.6, 0.2, 0.2}, 3).test) == dataset_hash(s.test));
  CHECK_THROWS_AS(split(data, {0.5, 0.2, 0.2}, 0), ContractError);

  ShapesConfig tiny = small_config();
  tiny.samples_per_class = 2;
  CHECK_THROWS_AS(split(gen_shapes(tiny), {0.5, 0.0, 0.5}, 0), ContractError);
}

TEST_CASE("paired datasets") {
  const auto data = gen_shapes(small_config());
  TransformSpec t;
  t.kind = TransformKind::LowRes;
  t.lowres_size = 8;
  const auto p = make_paired(data, t, 9);
  REQUIRE(p.size() == data.size());
  CHECK(dataset_hash(p) == dataset_hash(make_paired(data, t, 9)));
  CHECK(p.samples[3].x == data.images[3]);
  CHECK(p.samples[3].z == lowres(data.images[3], 8));
  CHECK(view_of(p, View::LQ).images[3] == p.samples[3].z);

  // Localization needs boxes; samples without one are skipped and reported.
  LabeledDataset partial = data;
  partial.boxes[2].reset();
  TransformSpec loc;
  loc.kind = TransformKind::Localize;
  const auto pl = make_paired(partial, loc, 0);
  CHECK(pl.size() == data.size() - 1);
  REQUIRE(pl.skipped.size() == 1);
  CHECK(pl.skipped[0].index == 2);
}

TEST_CASE("dataset round trips") {
  const auto data = gen_shapes(small_config());
  const auto dir = scratch_dir("roundtrip");
  save_labeled(data, dir / "f32");
  const auto back = load_labeled(dir / "f32");
  CHECK(dataset_hash(back) == dataset_hash(data));

  save_labeled(data, dir / "png", Encoding::Png);
  const auto png = load_labeled(dir / "png");
  REQUIRE(png.size() == data.size());
  CHECK(png.labels == data.labels);
  CHECK(png.boxes == data.boxes);
  double worst = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t k = 0; k < data.images[i].pixels.size(); ++k)
      worst = std::max(worst, double(std::abs(png.images[i].pixels[k] - data.images[i].pixels[k])));
  CHECK(worst <= 0.5 / 255.0 + 1e-6);

  TransformSpec t;
  t.kind = TransformKind::Edges;
  const auto paired = make_paired(data, t, 4);
  save_paired(paired, dir / "paired");
  const auto pb = load_paired(dir / "paired");
  CHECK(dataset_hash(pb) == dataset_hash(paired));
  CHECK(pb.transform == paired.transform);
}

TEST_CASE("damaged datasets are rejected") {
  const auto data = gen_shapes(small_config());
  const auto dir = scratch_dir("damaged");
  save_labeled(data, dir / "d");
  CHECK_THROWS_AS(load_paired(dir / "d"), FormatError);

  auto manifest = read_json(dir / "d" / "manifest.json");
  manifest["format_version"] = 99;
  write_json_atomic(dir / "d" / "manifest.json", manifest);
  CHECK_THROWS_AS(load_labeled(dir / "d"), VersionError);

  save_labeled(data, dir / "e");
  manifest = read_json(dir / "e" / "manifest.json");
  manifest["samples"][0].erase("label");
  write_json_atomic(dir / "e" / "manifest.json", manifest);
  CHECK_THROWS_AS(load_labeled(dir / "e"), FormatError);

  save_labeled(data, dir / "f");
  const auto first = dir / "f" / read_json(dir / "f" / "manifest.json")["samples"][0]["image"].get<std::string>();
  std::string bytes = read_file(first);
  bytes[5] ^= 0x7F;
  write_file_atomic(first, bytes);
  CHECK_THROWS_AS(load_labeled(dir / "f"), FormatError);

  write_file_atomic(dir / "g.f32", std::string(10, '\0'));
  CHECK_THROWS_AS(read_f32(dir / "g.f32", 2, 2, 3), PayloadLengthError);
  write_file_atomic(dir / "h" / "manifest.json", "{ not json");
  CHECK_THROWS_AS(load_labeled(dir / "h"), FormatError);
}

TEST_CASE("image directories") {
  const auto data = gen_shapes(small_config());
  const auto dir = scratch_dir("imgdir");
  export_image_dir(data, dir);
  const auto back = load_image_dir(dir, dir / "labels.csv", dir / "boxes.csv", 32);
  CHECK(back.size() == data.size());
  CHECK(back.labels == data.labels);
  CHECK(back.boxes == data.boxes);
  CHECK(back.num_classes == 4);

  // A missing file and an out-of-frame box are reported, not fatal.
  {
    std::ofstream labels(dir / "labels.csv", std::ios::app);
    labels << "images/missing.png,1\n";
    std::ofstream boxes(dir / "boxes.csv", std::ios::app);
    boxes << "images/000000.png,-4,-4,40,20\n";
  }
  const auto again = load_image_dir(dir, dir / "labels.csv", dir / "boxes.csv", 16);
  CHECK(again.size() == data.size());
  CHECK(again.provenance["errors"].size() == 1);
  CHECK(again.provenance["clamped_boxes"].size() == 1);
  CHECK(*again.boxes[0] == Box{0, 0, 16, 10});
  CHECK(again.images[0].height == 16);
}
