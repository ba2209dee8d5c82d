#include <doctest.h>

#include <cmath>
#include <random>

#include "cqd/degrade.hpp"
#include "cqd/errors.hpp"

using namespace cqd;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(h, w, c);
  for (float& v : img.pixels) v = u(rng);
  return img;
}

bool in_unit_range(const Image& img) {
  for (float v : img.pixels)
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  return true;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(double(a.pixels[i]) - b.pixels[i]));
  return m;
}

}  // namespace

TEST_CASE("area resize averages covered pixels") {
  Image img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(y, x, 0) = static_cast<float>(y * 4 + x);
  const Image half = resize_area(img, 2, 2);
  CHECK(half.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(half.at(1, 1, 0) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));

  // 3 -> 2: each output cell covers 1.5 input pixels.
  Image row(1, 3, 1);
  row.pixels = {0.0f, 0.6f, 0.9f};
  const Image r = resize_area(row, 1, 2);
  CHECK(r.at(0, 0, 0) == doctest::Approx((0.0 + 0.5 * 0.6) / 1.5));
  CHECK(r.at(0, 1, 0) == doctest::Approx((0.5 * 0.6 + 0.9) / 1.5));
}

TEST_CASE("nearest resize replicates") {
  Image img(2, 2, 1);
  img.pixels = {0.1f, 0.2f, 0.3f, 0.4f};
  const Image up = resize_nearest(img, 4, 4);
  CHECK(up.at(0, 1, 0) == 0.1f);
  CHECK(up.at(1, 2, 0) == 0.2f);
  CHECK(up.at(3, 0, 0) == 0.3f);
  CHECK(up.at(2, 3, 0) == 0.4f);
}

TEST_CASE("crop to the full frame at the same size is exact") {
  const Image img = random_image(9, 7, 3, 1);
  CHECK(crop_to_box(img, Box{0, 0, 7, 9}, 9, 7) == img);
  CHECK_THROWS_AS(crop_to_box(img, Box{0, 0, 8, 9}, 9, 7), ContractError);
  CHECK_THROWS_AS(crop_to_box(img, Box{3, 3, 3, 5}, 9, 7), ContractError);
}

TEST_CASE("lowres is idempotent and stays in range") {
  for (int s : {8, 16, 32}) {
    const Image img = random_image(64, 64, 3, static_cast<std::uint64_t>(s));
    const Image once = lowres(img, s);
    const Image twice = lowres(once, s);
    CHECK(max_abs_diff(once, twice) <= 1e-5);
    CHECK(in_unit_range(once));
  }
  // Non-dividing sizes are allowed; only the range is promised.
  CHECK(in_unit_range(lowres(random_image(30, 30, 3, 2), 7, Upsample::Bilinear)));
  CHECK_THROWS_AS(lowres(random_image(16, 16, 3, 0), 1), ContractError);
  CHECK_THROWS_AS(lowres(random_image(16, 16, 3, 0), 17), ContractError);
}

TEST_CASE("edge map is colourless") {
  const Image img = random_image(32, 24, 3, 4);
  const Image e = edge_map(img);
  CHECK(in_unit_range(e));
  for (int y = 0; y < e.height; ++y)
    for (int x = 0; x < e.width; ++x) {
      CHECK(e.at(y, x, 0) == e.at(y, x, 1));
      CHECK(e.at(y, x, 1) == e.at(y, x, 2));
    }
  const Image flat(8, 8, 3, 0.4f);
  for (float v : edge_map(flat).pixels) CHECK(v == 0.0f);

  // A vertical step edge lights up exactly the column before the step.
  Image step(6, 6, 3, 0.0f);
  for (int y = 0; y < 6; ++y)
    for (int x = 3; x < 6; ++x)
      for (int c = 0; c < 3; ++c) step.at(y, x, c) = 1.0f;
  const Image es = edge_map(step);
  CHECK(es.at(2, 2, 0) == 1.0f);
  CHECK(es.at(2, 1, 0) == 0.0f);
  CHECK(es.at(2, 4, 0) == 0.0f);
}

TEST_CASE("tps with zero displacement is the identity") {
  const Image img = random_image(24, 24, 3, 5);
  const TpsWarp w = tps_fit(5, 0.0, 123, 24, 24);
  CHECK(tps_distort(img, w) == img);
  const Point2 p = w({3.0, 17.0});
  CHECK(p.x == 3.0);
  CHECK(p.y == 17.0);
}

TEST_CASE("tps interpolates its control points") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TpsWarp w = tps_fit(7, 1.5, seed, 64, 64);
    double worst = 0;
    for (std::size_t i = 0; i < w.control_src.size(); ++i) {
      const Point2 f = w.forward(w.control_src[i]);
      const Point2 b = w.backward(w.control_dst[i]);
      worst = std::max({worst, std::hypot(f.x - w.control_dst[i].x, f.y - w.control_dst[i].y),
                        std::hypot(b.x - w.control_src[i].x, b.y - w.control_src[i].y)});
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("tps reproduces an affine map exactly") {
  const auto src = control_grid(4, 20, 30);
  std::vector<Point2> dst;
  for (const auto& p : src) dst.push_back({1.5 + 0.9 * p.x - 0.2 * p.y, -2.0 + 0.1 * p.x + 1.1 * p.y});
  const TpsMap m = TpsMap::fit(src, dst);
  for (double x : {0.3, 7.7, 22.0})
    for (double y : {1.0, 9.5, 18.2}) {
      const Point2 q = m({x, y});
      CHECK(q.x == doctest::Approx(1.5 + 0.9 * x - 0.2 * y).epsilon(1e-9));
      CHECK(q.y == doctest::Approx(-2.0 + 0.1 * x + 1.1 * y).epsilon(1e-9));
    }
  for (const auto& w : m.weights) {
    CHECK(std::abs(w[0]) < 1e-8);
    CHECK(std::abs(w[1]) < 1e-8);
  }
}

TEST_CASE("tps defaults") {
  CHECK(default_tps_sigma(224) == doctest::Approx(2.0));
  CHECK(default_tps_sigma(64) == doctest::Approx(2.0 * 64 / 224));
  CHECK(default_tps_grid(224) == 14);
  CHECK(default_tps_grid(64) == 7);
  CHECK_THROWS_AS(control_grid(2, 10, 10), ContractError);
  CHECK_THROWS_AS(tps_fit(5, -1.0, 0, 10, 10), ContractError);
}

TEST_CASE("transforms are deterministic per seed and in range") {
  const Image img = random_image(32, 32, 3, 8);
  const Box box{4, 6, 20, 28};
  for (auto kind : {TransformKind::Identity, TransformKind::Localize, TransformKind::LowRes, TransformKind::Edges,
                    TransformKind::Distort, TransformKind::LocalizeLowRes}) {
    TransformSpec spec;
    spec.kind = kind;
    spec.lowres_size = 8;
    const ViewPair a = apply_transform(spec, img, box, 77);
    const ViewPair b = apply_transform(spec, img, box, 77);
    CHECK(a.lq.content_hash() == b.lq.content_hash());
    CHECK(a.hq.content_hash() == b.hq.content_hash());
    CHECK(in_unit_range(a.lq));
    CHECK(in_unit_range(a.hq));
    CHECK(a.lq.same_size(img));
  }
  TransformSpec d;
  d.kind = TransformKind::Distort;
  CHECK(apply_transform(d, img, std::nullopt, 1).lq.content_hash() !=
        apply_transform(d, img, std::nullopt, 2).lq.content_hash());
}

TEST_CASE("localized views") {
  const Image img = random_image(32, 32, 3, 9);
  const Box box{8, 8, 24, 24};
  TransformSpec spec;
  spec.kind = TransformKind::Localize;
  const ViewPair v = apply_transform(spec, img, box, 0);
  CHECK(v.lq == img);
  CHECK(v.hq == crop_to_box(img, box, 32, 32));
  REQUIRE(v.lq_box);
  CHECK(*v.lq_box == box);
  CHECK_THROWS_AS(apply_transform(spec, img, std::nullopt, 0), ContractError);

  const ViewPair c = compound_lowres_noloc(img, box, 8);
  CHECK(c.lq == lowres(img, 8));
  CHECK(c.stages.size() == 2);
}

TEST_CASE("transform descriptors round trip") {
  TransformSpec t;
  t.kind = TransformKind::Distort;
  t.tps_grid = 5;
  t.tps_sigma = 0.7;
  t.upsample = Upsample::Bilinear;
  nlohmann::json j = t;
  CHECK(j.get<TransformSpec>() == t);
  CHECK_THROWS_AS(transform_kind_from_string("blur"), ConfigError);
  CHECK_THROWS_AS((nlohmann::json{{"kind", "lowres"}, {"upsample", "cubic"}}.get<TransformSpec>()), ConfigError);
}
