#include "cqd/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "cqd/errors.hpp"

namespace cqd {
namespace {

struct Tap {
  int index;
  double weight;
};

// Coverage of each output cell over the input axis, normalized to sum to 1.
std::vector<std::vector<Tap>> area_taps(int in, int out) {
  std::vector<std::vector<Tap>> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * ratio, hi = (o + 1) * ratio;
    for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) taps[static_cast<std::size_t>(o)].push_back({i, overlap / ratio});
    }
  }
  return taps;
}

void require_image(const Image& img, const char* op) {
  if (img.empty() || img.height < 1 || img.width < 1 || img.channels < 1)
    throw ContractError(std::string(op) + ": empty image");
}

}  // namespace

Image resize_area(const Image& img, int out_h, int out_w) {
  require_image(img, "resize_area");
  CQD_REQUIRE(out_h >= 1 && out_w >= 1, "resize_area: output size must be positive");
  const auto ty = area_taps(img.height, out_h);
  const auto tx = area_taps(img.width, out_w);
  Image out(out_h, out_w, img.channels);
  std::vector<double> acc(static_cast<std::size_t>(img.channels));
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (const auto& a : ty[static_cast<std::size_t>(y)])
        for (const auto& b : tx[static_cast<std::size_t>(x)])
          for (int c = 0; c < img.channels; ++c) acc[static_cast<std::size_t>(c)] += a.weight * b.weight * img.at(a.index, b.index, c);
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = static_cast<float>(acc[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  require_image(img, "resize_bilinear");
  return crop_to_box(img, Box{0, 0, img.width, img.height}, out_h, out_w);
}

Image resize_nearest(const Image& img, int out_h, int out_w) {
  require_image(img, "resize_nearest");
  CQD_REQUIRE(out_h >= 1 && out_w >= 1, "resize_nearest: output size must be positive");
  Image out(out_h, out_w, img.channels);
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(img.height - 1, static_cast<int>((y + 0.5) * img.height / out_h));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(img.width - 1, static_cast<int>((x + 0.5) * img.width / out_w));
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

Image crop_to_box(const Image& img, const Box& box, int out_h, int out_w) {
  require_image(img, "crop_to_box");
  if (!box.valid_for(img.width, img.height))
    throw ContractError("crop_to_box: degenerate or out-of-bounds box");
  CQD_REQUIRE(out_h >= 1 && out_w >= 1, "crop_to_box: output size must be positive");
  const double sx = static_cast<double>(box.width()) / out_w;
  const double sy = static_cast<double>(box.height()) / out_h;
  Image out(out_h, out_w, img.channels);
  for (int y = 0; y < out_h; ++y) {
    const double src_y = box.y0 + (y + 0.5) * sy - 0.5;
    for (int x = 0; x < out_w; ++x) {
      const double src_x = box.x0 + (x + 0.5) * sx - 0.5;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_bilinear(img, src_x, src_y, c);
    }
  }
  return out;
}

Image lowres(const Image& img, int s, Upsample up) {
  require_image(img, "lowres");
  if (s <= 1 || s > std::min(img.height, img.width))
    throw ContractError("lowres: size " + std::to_string(s) + " outside (1, min(H, W)]");
  const Image small = resize_area(img, s, s);
  Image out = up == Upsample::Nearest ? resize_nearest(small, img.height, img.width)
                                      : resize_bilinear(small, img.height, img.width);
  return out.clip();
}

Image edge_map(const Image& img) {
  require_image(img, "edge_map");
  const int h = img.height, w = img.width;
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int c = 0; c < img.channels; ++c) s += img.at(y, x, c);
      gray[static_cast<std::size_t>(y) * w + x] = s / img.channels;
    }
  std::vector<double> mag(gray.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double gx = x + 1 < w ? gray[i + 1] - gray[i] : 0.0;
      const double gy = y + 1 < h ? gray[i + static_cast<std::size_t>(w)] - gray[i] : 0.0;
      mag[i] = std::sqrt(gx * gx + gy * gy);
    }
  std::vector<double> sorted = mag;
  const auto k = static_cast<std::size_t>(std::floor(0.99 * static_cast<double>(sorted.size() - 1)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  double norm = sorted[k];
  if (norm <= 1e-12) norm = *std::max_element(mag.begin(), mag.end());

  Image out(h, w, img.channels);
  if (norm <= 1e-12) return out;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = static_cast<float>(std::min(1.0, mag[static_cast<std::size_t>(y) * w + x] / norm));
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = v;
    }
  return out;
}

// --- TPS --------------------------------------------------------------------------

namespace {

double tps_kernel(double r2) { return r2 <= 0.0 ? 0.0 : 0.5 * r2 * std::log(r2); }

}  // namespace

Point2 TpsMap::operator()(Point2 p) const {
  double x = affine[0][0] + affine[0][1] * p.x + affine[0][2] * p.y;
  double y = affine[1][0] + affine[1][1] * p.x + affine[1][2] * p.y;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    const double dx = p.x - centers[i].x, dy = p.y - centers[i].y;
    const double u = tps_kernel(dx * dx + dy * dy);
    x += weights[i][0] * u;
    y += weights[i][1] * u;
  }
  return {x, y};
}

TpsMap TpsMap::identity(const std::vector<Point2>& centers) {
  TpsMap m;
  m.centers = centers;
  m.weights.assign(centers.size(), {0.0, 0.0});
  m.affine = {{{0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  return m;
}

TpsMap TpsMap::fit(const std::vector<Point2>& from, const std::vector<Point2>& to) {
  const std::size_t n = from.size();
  if (n < 3 || to.size() != n) throw ContractError("tps: need >= 3 matching control points");
  const auto dim = static_cast<Eigen::Index>(n + 3);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = from[i].x - from[j].x, dy = from[i].y - from[j].y;
      L(ii, static_cast<Eigen::Index>(j)) = tps_kernel(dx * dx + dy * dy);
    }
    const auto nn = static_cast<Eigen::Index>(n);
    L(ii, nn) = L(nn, ii) = 1.0;
    L(ii, nn + 1) = L(nn + 1, ii) = from[i].x;
    L(ii, nn + 2) = L(nn + 2, ii) = from[i].y;
    rhs(ii, 0) = to[i].x;
    rhs(ii, 1) = to[i].y;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
  if (lu.rank() < dim) throw NumericError("tps: singular system (degenerate control points)");
  const Eigen::MatrixXd sol = lu.solve(rhs);

  TpsMap m;
  m.centers = from;
  m.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    m.weights[i] = {sol(ii, 0), sol(ii, 1)};
  }
  const auto nn = static_cast<Eigen::Index>(n);
  for (int d = 0; d < 2; ++d) m.affine[static_cast<std::size_t>(d)] = {sol(nn, d), sol(nn + 1, d), sol(nn + 2, d)};
  return m;
}

std::vector<Point2> control_grid(int grid, int height, int width) {
  if (grid < 3) throw ContractError("tps: grid must be >= 3");
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(grid) * grid);
  for (int r = 0; r < grid; ++r)
    for (int c = 0; c < grid; ++c)
      pts.push_back({static_cast<double>(c) * (width - 1) / (grid - 1), static_cast<double>(r) * (height - 1) / (grid - 1)});
  return pts;
}

TpsWarp tps_from_points(int height, int width, int grid, std::vector<Point2> src, std::vector<Point2> dst) {
  TpsWarp w;
  w.height = height;
  w.width = width;
  w.grid = grid;
  if (src == dst) {
    w.forward = TpsMap::identity(src);
    w.backward = TpsMap::identity(dst);
  } else {
    w.forward = TpsMap::fit(src, dst);
    w.backward = TpsMap::fit(dst, src);
  }
  w.control_src = std::move(src);
  w.control_dst = std::move(dst);
  return w;
}

TpsWarp tps_fit(int grid, double sigma, std::uint64_t seed, int height, int width) {
  if (sigma < 0.0) throw ContractError("tps_fit: sigma must be >= 0");
  auto src = control_grid(grid, height, width);
  auto dst = src;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> shift(0.0, sigma);
    for (auto& p : dst) {
      p.x += shift(rng);
      p.y += shift(rng);
    }
  }
  return tps_from_points(height, width, grid, std::move(src), std::move(dst));
}

Image tps_distort(const Image& img, const TpsWarp& warp) {
  require_image(img, "tps_distort");
  if (img.height != warp.height || img.width != warp.width)
    throw ContractError("tps_distort: warp fitted for a different image size");
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Point2 src = warp.backward({static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = sample_bilinear(img, src.x, src.y, c);
    }
  return out.clip();
}

double default_tps_sigma(int side) { return 2.0 * side / 224.0; }

int default_tps_grid(int side) { return side >= 224 ? 14 : 7; }

// --- descriptors ------------------------------------------------------------------

std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Localize: return "localize";
    case TransformKind::LowRes: return "lowres";
    case TransformKind::Edges: return "edges";
    case TransformKind::Distort: return "distort";
    case TransformKind::LocalizeLowRes: return "localize_lowres";
  }
  return "?";
}

TransformKind transform_kind_from_string(const std::string& s) {
  for (auto k : {TransformKind::Identity, TransformKind::Localize, TransformKind::LowRes, TransformKind::Edges,
                 TransformKind::Distort, TransformKind::LocalizeLowRes})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown transform '" + s + "'");
}

bool TransformSpec::needs_box() const {
  return kind == TransformKind::Localize || kind == TransformKind::LocalizeLowRes || crop_hq;
}

void to_json(nlohmann::json& j, const TransformSpec& t) {
  j = {{"kind", to_string(t.kind)},
       {"lowres_size", t.lowres_size},
       {"upsample", t.upsample == Upsample::Nearest ? "nearest" : "bilinear"},
       {"crop_hq", t.crop_hq},
       {"tps_grid", t.tps_grid},
       {"tps_sigma", t.tps_sigma}};
  if (t.kind == TransformKind::Edges) j["edge_operator"] = "gradient_magnitude_p99";
}

void from_json(const nlohmann::json& j, TransformSpec& t) {
  t = TransformSpec{};
  t.kind = transform_kind_from_string(j.at("kind").get<std::string>());
  t.lowres_size = j.value("lowres_size", t.lowres_size);
  const auto up = j.value("upsample", std::string("nearest"));
  if (up != "nearest" && up != "bilinear") throw ConfigError("unknown upsample '" + up + "'");
  t.upsample = up == "nearest" ? Upsample::Nearest : Upsample::Bilinear;
  t.crop_hq = j.value("crop_hq", false);
  t.tps_grid = j.value("tps_grid", 0);
  t.tps_sigma = j.value("tps_sigma", -1.0);
}

ViewPair compound_lowres_noloc(const Image& img, const Box& box, int s, Upsample up) {
  ViewPair v;
  v.hq = crop_to_box(img, box, img.height, img.width);
  v.lq = lowres(img, s, up);
  v.lq_box = box;
  v.stages = nlohmann::json::array({{{"stage", "localize"}, {"hq", "crop_to_box"}, {"lq", "full_frame"}, {"box", box}},
                                    {{"stage", "lowres"}, {"view", "lq"}, {"size", s}}});
  return v;
}

ViewPair apply_transform(const TransformSpec& spec, const Image& img, const std::optional<Box>& box,
                         std::uint64_t sample_seed) {
  if (spec.needs_box() && !box) throw ContractError("transform '" + to_string(spec.kind) + "' needs a bounding box");
  if (spec.kind == TransformKind::LocalizeLowRes)
    return compound_lowres_noloc(img, *box, spec.lowres_size, spec.upsample);

  ViewPair v;
  if (spec.kind == TransformKind::Localize) {
    v.hq = crop_to_box(img, *box, img.height, img.width);
    v.lq = img;
    v.lq_box = box;
    v.stages.push_back({{"stage", "localize"}, {"hq", "crop_to_box"}, {"lq", "full_frame"}, {"box", *box}});
    return v;
  }

  const Image base = spec.crop_hq ? crop_to_box(img, *box, img.height, img.width) : img;
  v.lq_box = spec.crop_hq ? std::optional<Box>(Box{0, 0, img.width, img.height}) : box;
  if (spec.crop_hq) v.stages.push_back({{"stage", "crop"}, {"view", "both"}, {"box", *box}});
  switch (spec.kind) {
    case TransformKind::Identity:
      v.lq = base;
      break;
    case TransformKind::LowRes:
      v.lq = lowres(base, spec.lowres_size, spec.upsample);
      v.stages.push_back({{"stage", "lowres"}, {"view", "lq"}, {"size", spec.lowres_size}});
      break;
    case TransformKind::Edges:
      v.lq = edge_map(base);
      v.stages.push_back({{"stage", "edges"}, {"view", "lq"}, {"operator", "gradient_magnitude_p99"}});
      break;
    case TransformKind::Distort: {
      const int side = std::min(base.height, base.width);
      const int grid = spec.tps_grid > 0 ? spec.tps_grid : default_tps_grid(side);
      const double sigma = spec.tps_sigma >= 0.0 ? spec.tps_sigma : default_tps_sigma(side);
      v.lq = tps_distort(base, tps_fit(grid, sigma, sample_seed, base.height, base.width));
      v.stages.push_back({{"stage", "distort"}, {"view", "lq"}, {"grid", grid}, {"sigma", sigma}});
      break;
    }
    default:
      throw ContractError("unhandled transform");
  }
  v.hq = base;
  return v;
}

}  // namespace cqd
