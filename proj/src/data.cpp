#include "cqd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/parallel.hpp"

namespace cqd {

void ShapesConfig::validate() const {
  if (num_classes < 2) throw ConfigError("shapes: num_classes must be at least 2");
  if (samples_per_class < 1) throw ConfigError("shapes: samples_per_class must be positive");
  if (side < 16) throw ConfigError("shapes: side must be at least 16");
  if (clutter_density < 0) throw ConfigError("shapes: clutter_density must be non-negative");
  if (!(scale_min > 0 && scale_min <= scale_max && scale_max <= 1.0))
    throw ConfigError("shapes: object scale range must satisfy 0 < min <= max <= 1");
  if (scale_min * side < 8.0)
    throw ConfigError("shapes: smallest object (" + std::to_string(scale_min * side) + " px) is below 8 px for side " +
                      std::to_string(side));
  if (!(stripe_min >= 2.0 && stripe_min <= stripe_max)) throw ConfigError("shapes: stripe period range invalid");
  if (hue_jitter < 0 || hue_jitter > 0.5) throw ConfigError("shapes: hue_jitter must be in [0, 0.5]");
}

void to_json(nlohmann::json& j, const ShapesConfig& c) {
  j = {{"num_classes", c.num_classes},   {"samples_per_class", c.samples_per_class},
       {"side", c.side},                 {"clutter_density", c.clutter_density},
       {"scale_min", c.scale_min},       {"scale_max", c.scale_max},
       {"stripe_min", c.stripe_min},     {"stripe_max", c.stripe_max},
       {"hue_jitter", c.hue_jitter},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ShapesConfig& c) {
  ShapesConfig d;
  c.num_classes = j.value("num_classes", d.num_classes);
  c.samples_per_class = j.value("samples_per_class", d.samples_per_class);
  c.side = j.value("side", d.side);
  c.clutter_density = j.value("clutter_density", d.clutter_density);
  c.scale_min = j.value("scale_min", d.scale_min);
  c.scale_max = j.value("scale_max", d.scale_max);
  c.stripe_min = j.value("stripe_min", d.stripe_min);
  c.stripe_max = j.value("stripe_max", d.stripe_max);
  c.hue_jitter = j.value("hue_jitter", d.hue_jitter);
  c.seed = j.value("seed", d.seed);
}

namespace {

using Rgb = std::array<float, 3>;

Rgb hsv(double h, double s, double v) {
  h -= std::floor(h);
  const double k = h * 6.0;
  const int i = static_cast<int>(k) % 6;
  const double f = k - std::floor(k);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

constexpr int kSuper = 4;  // supersampling factor per axis

// Square-wave stripes along direction (cos a, sin a).
struct Stripes {
  double cos_a = 1, sin_a = 0, period = 4, phase = 0;
  Rgb light{}, dark{};
  Rgb at(double x, double y) const {
    const double t = (x * cos_a + y * sin_a) / period + phase;
    return t - std::floor(t) < 0.5 ? light : dark;
  }
};

// Draws a shape given by an inside test and a colour function, supersampled
// over [x0, x1)×[y0, y1). Returns the number of covered subsamples per pixel
// through `coverage` when non-null.
template <typename Inside, typename Colour>
void paint(Image& img, int x0, int y0, int x1, int y1, Inside inside, Colour colour, std::vector<int>* coverage) {
  x0 = std::max(x0, 0), y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width), y1 = std::min(y1, img.height);
  constexpr float inv = 1.0f / (kSuper * kSuper);
  for (int py = y0; py < y1; ++py) {
    for (int px = x0; px < x1; ++px) {
      int hits = 0;
      float acc[3] = {0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          // pixel centres at integer coordinates
          const double x = px - 0.5 + (sx + 0.5) / kSuper;
          const double y = py - 0.5 + (sy + 0.5) / kSuper;
          if (!inside(x, y)) continue;
          ++hits;
          const Rgb c = colour(x, y);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      if (hits == 0) continue;
      const float cov = hits * inv;
      for (int ch = 0; ch < 3; ++ch) {
        float& dst = img.at(py, px, ch);
        dst = dst * (1.0f - cov) + acc[ch] * inv;
      }
      if (coverage) (*coverage)[static_cast<std::size_t>(py) * img.width + px] += hits;
    }
  }
}

}  // namespace

RenderedShape render_shape(const ShapesConfig& cfg, int label, std::uint64_t sample_seed) {
  CQD_REQUIRE(label >= 0 && label < cfg.num_classes, "render_shape: label out of range");
  std::mt19937_64 rng(sample_seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
  const int side = cfg.side;
  const double two_pi = 2.0 * std::numbers::pi;

  Image img(side, side, 3);

  // Background: tinted grey with a linear gradient.
  const double bg_level = range(0.3, 0.7);
  const Rgb tint = hsv(uni(rng), range(0.0, 0.25), 1.0);
  const double gx = range(-0.15, 0.15), gy = range(-0.15, 0.15);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double v = bg_level + gx * (x / double(side) - 0.5) + gy * (y / double(side) - 0.5);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(v * tint[c]);
    }

  // Distractors: ellipses, some striped. Never polygons, so they carry no class.
  std::poisson_distribution<int> count_dist(cfg.clutter_density);
  const int n_clutter = cfg.clutter_density > 0 ? count_dist(rng) : 0;
  for (int k = 0; k < n_clutter; ++k) {
    const double rx = range(0.05, 0.13) * side, ry = range(0.05, 0.13) * side;
    const double cx = range(0, side), cy = range(0, side);
    const double rot = range(0, two_pi);
    const double cr = std::cos(rot), sr = std::sin(rot);
    Stripes st;
    st.light = hsv(uni(rng), range(0.2, 1.0), range(0.4, 1.0));
    const bool striped = uni(rng) < 0.5;
    const double a = range(0, two_pi);
    st.cos_a = std::cos(a), st.sin_a = std::sin(a);
    st.period = range(cfg.stripe_min, cfg.stripe_max);
    st.phase = uni(rng);
    st.dark = striped ? Rgb{st.light[0] * 0.35f, st.light[1] * 0.35f, st.light[2] * 0.35f} : st.light;
    const double r = std::max(rx, ry);
    paint(
        img, int(std::floor(cx - r)), int(std::floor(cy - r)), int(std::ceil(cx + r)) + 1, int(std::ceil(cy + r)) + 1,
        [&](double x, double y) {
          const double u = ((x - cx) * cr + (y - cy) * sr) / rx;
          const double v = (-(x - cx) * sr + (y - cy) * cr) / ry;
          return u * u + v * v <= 1.0;
        },
        [&](double x, double y) { return st.at(x, y); }, nullptr);
  }

  // The object: regular polygon, class-defined hue and vertex count, striped.
  const int groups = (cfg.num_classes + 1) / 2;
  const int group = label / 2;
  const int fine = label % 2;
  const int vertices = 3 + group % 4;
  const double hue = double(group) / groups + range(-cfg.hue_jitter, cfg.hue_jitter);
  Stripes st;
  st.light = hsv(hue, range(0.65, 1.0), range(0.7, 1.0));
  st.dark = {st.light[0] * 0.3f, st.light[1] * 0.3f, st.light[2] * 0.3f};
  // fine = 0: stripes vary along y (horizontal bands); fine = 1: along x.
  const double stripe_angle = (fine == 0 ? std::numbers::pi / 2 : 0.0) + range(-0.17, 0.17);
  st.cos_a = std::cos(stripe_angle), st.sin_a = std::sin(stripe_angle);
  st.period = range(cfg.stripe_min, cfg.stripe_max);
  st.phase = uni(rng);

  const double radius = 0.5 * range(cfg.scale_min, cfg.scale_max) * side;
  const double cx = range(radius - 0.5, side - 0.5 - radius);
  const double cy = range(radius - 0.5, side - 0.5 - radius);
  const double rot = range(0, two_pi);
  const double apothem = radius * std::cos(std::numbers::pi / vertices);
  std::vector<std::array<double, 2>> normals(vertices);
  for (int k = 0; k < vertices; ++k) {
    const double a = rot + (k + 0.5) * two_pi / vertices;
    normals[k] = {std::cos(a), std::sin(a)};
  }
  std::vector<int> coverage(static_cast<std::size_t>(side) * side, 0);
  paint(
      img, int(std::floor(cx - radius)), int(std::floor(cy - radius)), int(std::ceil(cx + radius)) + 1,
      int(std::ceil(cy + radius)) + 1,
      [&](double x, double y) {
        for (const auto& n : normals)
          if ((x - cx) * n[0] + (y - cy) * n[1] > apothem) return false;
        return true;
      },
      [&](double x, double y) { return st.at(x, y); }, &coverage);

  // Sensor noise.
  std::normal_distribution<float> noise(0.0f, 0.015f);
  for (float& v : img.pixels) v += noise(rng);
  img.clip();

  Box box{side, side, 0, 0};
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      if (coverage[static_cast<std::size_t>(y) * side + x] > 0) {
        box.x0 = std::min(box.x0, x), box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1), box.y1 = std::max(box.y1, y + 1);
      }
  if (!box.valid_for(side, side)) throw NumericError("render_shape: object covers no pixels");
  std::vector<float> fraction(coverage.size());
  for (std::size_t i = 0; i < coverage.size(); ++i) fraction[i] = static_cast<float>(coverage[i]) / (kSuper * kSuper);
  return {std::move(img), box, std::move(fraction)};
}

LabeledDataset gen_shapes(const ShapesConfig& cfg) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(cfg.num_classes) * cfg.samples_per_class;
  std::vector<RenderedShape> rendered(n);
  parallel_for(n, default_jobs(), [&](std::size_t i) {
    rendered[i] = render_shape(cfg, static_cast<int>(i % cfg.num_classes), derive_seed(cfg.seed, i));
  });
  LabeledDataset out;
  out.num_classes = cfg.num_classes;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(std::move(rendered[i].image), static_cast<int>(i % cfg.num_classes), rendered[i].box);
  out.provenance = {{"generator", "shapes"}, {"config", cfg}};
  return out;
}

Splits split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  data.validate();
  for (double f : fractions) CQD_REQUIRE(f >= 0.0, "split: fractions must be non-negative");
  CQD_REQUIRE(std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) < 1e-9, "split: fractions must sum to 1");

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

  std::vector<int> assignment(data.size(), 2);
  for (int c = 0; c < data.num_classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 3)
      throw ContractError("split: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                          " samples, stratification needs at least 3");
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
    const std::size_t n_val = std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
    for (std::size_t k = 0; k < idx.size(); ++k) assignment[idx[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);
  }

  Splits out;
  LabeledDataset* parts[3] = {&out.train, &out.val, &out.test};
  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    parts[s]->num_classes = data.num_classes;
    parts[s]->split = names[s];
    parts[s]->provenance = {{"parent", data.provenance}, {"split_seed", seed}, {"fractions", fractions}};
  }
  for (std::size_t i = 0; i < data.size(); ++i)
    parts[assignment[i]]->push_back(data.images[i], data.labels[i], data.boxes[i]);
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  return out;
}

bool parse_int(const std::string& s, int& v) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  return ec == std::errc() && ptr == end;
}

// Rows of a CSV file, skipping blank lines and a non-numeric header row.
std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, std::size_t numeric_col) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto row = split_csv(line);
    int dummy = 0;
    if (first && (row.size() <= numeric_col || !parse_int(row[numeric_col], dummy))) {
      first = false;
      continue;
    }
    first = false;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

LabeledDataset load_image_dir(const std::filesystem::path& root, const std::filesystem::path& label_file,
                              const std::optional<std::filesystem::path>& box_file, int out_side) {
  CQD_REQUIRE(out_side > 0, "load_image_dir: output side must be positive");
  auto errors = nlohmann::json::array();
  auto warnings = nlohmann::json::array();
  auto clamped = nlohmann::json::array();

  const auto label_rows = read_rows(label_file, 1);
  if (label_rows.empty()) warnings.push_back("label file " + label_file.string() + " has no rows");

  std::map<std::string, std::array<int, 4>> raw_boxes;
  if (box_file) {
    for (const auto& row : read_rows(*box_file, 1)) {
      std::array<int, 4> b{};
      bool ok = row.size() == 5;
      for (int k = 0; ok && k < 4; ++k) ok = parse_int(row[k + 1], b[k]);
      if (!ok) {
        errors.push_back({{"file", row.empty() ? "" : row[0]}, {"error", "malformed box row"}});
        continue;
      }
      raw_boxes[row[0]] = b;
    }
  }

  LabeledDataset out;
  int max_label = -1;
  for (const auto& row : label_rows) {
    int label = 0;
    if (row.size() != 2 || !parse_int(row[1], label) || label < 0) {
      errors.push_back({{"file", row.empty() ? "" : row[0]}, {"error", "malformed label row"}});
      continue;
    }
    Image img;
    try {
      img = read_image_file(root / row[0]);
    } catch (const Error& e) {
      errors.push_back({{"file", row[0]}, {"error", e.what()}});
      continue;
    }
    const int h = img.height, w = img.width;
    if (h != out_side || w != out_side)
      img = (h >= out_side && w >= out_side) ? resize_area(img, out_side, out_side)
                                             : resize_bilinear(img, out_side, out_side);

    std::optional<Box> box;
    if (auto it = raw_boxes.find(row[0]); it != raw_boxes.end()) {
      auto [x0, y0, x1, y1] = it->second;
      const int cx0 = std::clamp(x0, 0, w), cx1 = std::clamp(x1, 0, w);
      const int cy0 = std::clamp(y0, 0, h), cy1 = std::clamp(y1, 0, h);
      if (cx0 != x0 || cx1 != x1 || cy0 != y0 || cy1 != y1)
        clamped.push_back({{"file", row[0]}, {"original", {x0, y0, x1, y1}}, {"clamped", {cx0, cy0, cx1, cy1}}});
      const double sx = double(out_side) / w, sy = double(out_side) / h;
      Box b{static_cast<int>(std::floor(cx0 * sx)), static_cast<int>(std::floor(cy0 * sy)),
            static_cast<int>(std::ceil(cx1 * sx)), static_cast<int>(std::ceil(cy1 * sy))};
      b.x1 = std::min(b.x1, out_side), b.y1 = std::min(b.y1, out_side);
      if (b.valid_for(out_side, out_side))
        box = b;
      else
        errors.push_back({{"file", row[0]}, {"error", "box is empty after clamping"}});
    }
    max_label = std::max(max_label, label);
    out.push_back(std::move(img), label, box);
  }
  out.num_classes = max_label + 1;
  out.provenance = {{"source", "image_dir"},      {"root", root.string()},   {"label_file", label_file.string()},
                    {"out_side", out_side},       {"errors", errors},        {"warnings", warnings},
                    {"clamped_boxes", clamped}};
  if (box_file) out.provenance["box_file"] = box_file->string();
  return out;
}

void export_image_dir(const LabeledDataset& data, const std::filesystem::path& dir) {
  data.validate();
  std::filesystem::create_directories(dir / "images");
  std::ostringstream labels, boxes;
  labels << "relative_path,label\n";
  boxes << "relative_path,x0,y0,x1,y1\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "images/%06zu.png", i);
    write_png(data.images[i], dir / name);
    labels << name << ',' << data.labels[i] << '\n';
    if (const auto& b = data.boxes[i])
      boxes << name << ',' << b->x0 << ',' << b->y0 << ',' << b->x1 << ',' << b->y1 << '\n';
  }
  write_file_atomic(dir / "labels.csv", labels.str());
  write_file_atomic(dir / "boxes.csv", boxes.str());
}

}  // namespace cqd
