#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cqd/dataset.hpp"

namespace cqd {

/// Synthetic fine-grained shapes. Classes come in pairs: a coarse group
/// (hue + polygon vertex count, both visible at low resolution) and a fine
/// attribute within the group (stripe orientation, drawn at a period of a few
/// pixels so that it largely disappears under downsampling).
struct ShapesConfig {
  int num_classes = 10;
  int samples_per_class = 200;
  int side = 64;
  /// Expected number of distractor patches per image.
  double clutter_density = 4.0;
  /// Object diameter as a fraction of the image side.
  double scale_min = 0.6;
  double scale_max = 0.9;
  /// Stripe period range in pixels (at the generated resolution).
  double stripe_min = 3.0;
  double stripe_max = 6.0;
  /// Random jitter of object hue (fraction of the hue circle).
  double hue_jitter = 0.03;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ShapesConfig& c);
void from_json(const nlohmann::json& j, ShapesConfig& c);

/// Class-balanced, deterministic per config. Sample i has label i % K and its
/// own seed derive_seed(seed, i); boxes are the exact extent of rendered
/// object pixels.
LabeledDataset gen_shapes(const ShapesConfig& config);

/// Renders one sample; exposed for tests.
struct RenderedShape {
  Image image;
  Box box;
  /// Object coverage per pixel in [0, 1], row-major.
  std::vector<float> coverage;
};
RenderedShape render_shape(const ShapesConfig& config, int label, std::uint64_t sample_seed);

struct Splits {
  LabeledDataset train, val, test;
};

/// Stratified split; within each class, samples are shuffled with `seed` and
/// cut at the rounded proportions. Output keeps the original sample order.
Splits split(const LabeledDataset& data, std::array<double, 3> fractions, std::uint64_t seed);

/// Reads `relative_path,label` rows (and optional `relative_path,x0,y0,x1,y1`
/// box rows) under `root`, decoding each image to [0, 1] floats of
/// out_side×out_side. Unreadable files are listed in provenance["errors"];
/// boxes crossing the image are clamped and listed in provenance["clamped_boxes"].
LabeledDataset load_image_dir(const std::filesystem::path& root, const std::filesystem::path& label_file,
                              const std::optional<std::filesystem::path>& box_file, int out_side);

/// Writes PNGs plus labels.csv / boxes.csv under `dir` (the load_image_dir layout)
/// (readable back with load_image_dir).
void export_image_dir(const LabeledDataset& data, const std::filesystem::path& dir);

}  // namespace cqd
