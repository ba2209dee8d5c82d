#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/degrade.hpp"
#include "cqd/image.hpp"

namespace cqd {

/// Images with labels in [0, K) and optional object boxes.
struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::optional<Box>> boxes;
  int num_classes = 0;
  std::string split = "train";
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const { return images.size(); }
  void push_back(Image img, int label, std::optional<Box> box = std::nullopt);
  /// Throws ContractError when the parallel arrays disagree or labels are out of range.
  void validate() const;
};

/// One instance seen through both domains: x (high quality), z = T(x), label y.
struct PairedSample {
  Image x;
  Image z;
  int y = 0;
  std::optional<Box> box;  ///< object extent in z's frame
  std::string source_hash;  ///< content hash of the image both views were made from
  std::uint64_t seed = 0;   ///< per-sample seed handed to the transform
};

struct SkippedSample {
  std::size_t index = 0;
  std::string reason;
};

struct PairedDataset {
  std::vector<PairedSample> samples;
  TransformSpec transform;
  std::uint64_t seed = 0;
  int num_classes = 0;
  std::string split = "train";
  nlohmann::json stages = nlohmann::json::array();
  std::vector<SkippedSample> skipped;

  std::size_t size() const { return samples.size(); }
};

/// Either view of a PairedDataset as a labeled set.
enum class View { HQ, LQ };
LabeledDataset view_of(const PairedDataset& paired, View view);

/// Deterministic per (dataset, transform, seed); sample i gets
/// derive_seed(seed, i). Samples missing a required box are skipped and
/// listed in `skipped`.
PairedDataset make_paired(const LabeledDataset& data, const TransformSpec& transform, std::uint64_t seed);

// --- on-disk layout -------------------------------------------------------------
//
// <dir>/manifest.json + one file per image. The manifest carries a format
// version, the dataset kind, image shape, encoding and a sample table with
// labels, boxes, relative paths and sha256 file hashes.

inline constexpr int kManifestVersion = 1;

enum class Encoding { F32, Png };

void save_labeled(const LabeledDataset& data, const std::filesystem::path& dir, Encoding enc = Encoding::F32);
LabeledDataset load_labeled(const std::filesystem::path& dir);

void save_paired(const PairedDataset& data, const std::filesystem::path& dir, Encoding enc = Encoding::F32);
PairedDataset load_paired(const std::filesystem::path& dir);

/// Aggregate content hash of a dataset (labels, boxes, pixels).
std::string dataset_hash(const LabeledDataset& data);
std::string dataset_hash(const PairedDataset& data);

// Image file codecs used by the manifests and by directory ingestion.
void write_png(const Image& img, const std::filesystem::path& path);
/// Decodes PNG/JPEG/etc. to RGB floats in [0, 1]. Throws IoError on failure.
Image read_image_file(const std::filesystem::path& path);
void write_f32(const Image& img, const std::filesystem::path& path);
Image read_f32(const std::filesystem::path& path, int height, int width, int channels);

}  // namespace cqd
