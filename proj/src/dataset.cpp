#include "cqd/dataset.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/parallel.hpp"

namespace cqd {

void LabeledDataset::push_back(Image img, int label, std::optional<Box> box) {
  images.push_back(std::move(img));
  labels.push_back(label);
  boxes.push_back(box);
}

void LabeledDataset::validate() const {
  if (labels.size() != images.size() || boxes.size() != images.size())
    throw ContractError("dataset: images/labels/boxes lengths differ");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw ContractError("dataset: label " + std::to_string(y) + " out of range");
}

LabeledDataset view_of(const PairedDataset& paired, View view) {
  LabeledDataset out;
  out.num_classes = paired.num_classes;
  out.split = paired.split;
  out.provenance = {{"view", view == View::HQ ? "hq" : "lq"}, {"transform", paired.transform}};
  out.images.reserve(paired.size());
  for (const auto& s : paired.samples)
    out.push_back(view == View::HQ ? s.x : s.z, s.y,
                  view == View::LQ ? s.box : std::optional<Box>(Box{0, 0, s.x.width, s.x.height}));
  return out;
}

PairedDataset make_paired(const LabeledDataset& data, const TransformSpec& transform, std::uint64_t seed) {
  data.validate();
  PairedDataset out;
  out.transform = transform;
  out.seed = seed;
  out.num_classes = data.num_classes;
  out.split = data.split;

  std::vector<std::optional<PairedSample>> slots(data.size());
  std::vector<std::string> errors(data.size());
  std::vector<nlohmann::json> stages(data.size());
  parallel_for(data.size(), default_jobs(), [&](std::size_t i) {
    const std::uint64_t sample_seed = derive_seed(seed, i);
    try {
      ViewPair v = apply_transform(transform, data.images[i], data.boxes[i], sample_seed);
      PairedSample s;
      s.x = std::move(v.hq);
      s.z = std::move(v.lq);
      s.y = data.labels[i];
      s.box = v.lq_box;
      s.source_hash = data.images[i].content_hash();
      s.seed = sample_seed;
      stages[i] = std::move(v.stages);
      slots[i] = std::move(s);
    } catch (const ContractError& e) {
      errors[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      if (out.samples.empty()) out.stages = stages[i];
      out.samples.push_back(std::move(*slots[i]));
    } else {
      out.skipped.push_back({i, errors[i]});
    }
  }
  return out;
}

// --- codecs -----------------------------------------------------------------------

void write_png(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_png: need 1 or 3 channels");
  cv::Mat mat(img.height, img.width, img.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < img.height; ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        // OpenCV stores BGR.
        const int dst_c = img.channels == 3 ? 2 - c : c;
        const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
        row[x * img.channels + dst_c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw IoError("cannot write " + path.string());
}

Image read_image_file(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw IoError("cannot decode image " + path.string());
  cv::Mat u8;
  if (mat.depth() != CV_8U)
    mat.convertTo(u8, CV_8U, 1.0 / 256.0);
  else
    u8 = mat;
  Image img(u8.rows, u8.cols, 3);
  for (int y = 0; y < u8.rows; ++y) {
    const auto* row = u8.ptr<unsigned char>(y);
    for (int x = 0; x < u8.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x * 3 + (2 - c)] / 255.0f;
  }
  return img;
}

void write_f32(const Image& img, const std::filesystem::path& path) {
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(img.pixels.data()),
                                           img.pixels.size() * sizeof(float)));
}

Image read_f32(const std::filesystem::path& path, int height, int width, int channels) {
  const std::string bytes = read_file(path);
  Image img(height, width, channels);
  if (bytes.size() != img.pixels.size() * sizeof(float))
    throw PayloadLengthError(path.string() + ": expected " + std::to_string(img.pixels.size() * sizeof(float)) +
                             " bytes, found " + std::to_string(bytes.size()));
  std::memcpy(img.pixels.data(), bytes.data(), bytes.size());
  return img;
}

// --- manifests --------------------------------------------------------------------

namespace {

std::string encoding_name(Encoding e) { return e == Encoding::Png ? "png" : "f32"; }

Encoding encoding_from(const std::string& s) {
  if (s == "png") return Encoding::Png;
  if (s == "f32") return Encoding::F32;
  throw FormatError("unknown image encoding '" + s + "'");
}

std::string image_name(const std::string& prefix, std::size_t i, Encoding e) {
  std::ostringstream os;
  os << prefix << std::setw(6) << std::setfill('0') << i << (e == Encoding::Png ? ".png" : ".f32");
  return os.str();
}

std::string store_image(const Image& img, const std::filesystem::path& dir, const std::string& rel, Encoding e) {
  const auto path = dir / rel;
  if (e == Encoding::Png)
    write_png(img, path);
  else
    write_f32(img, path);
  return sha256_hex(read_file(path));
}

Image fetch_image(const std::filesystem::path& dir, const std::string& rel, const std::string& hash, Encoding e,
                  int h, int w, int c) {
  const auto path = dir / rel;
  if (!std::filesystem::exists(path)) throw IoError("missing image file " + path.string());
  if (!hash.empty() && sha256_hex(read_file(path)) != hash)
    throw FormatError("content hash mismatch for " + path.string());
  if (e == Encoding::F32) return read_f32(path, h, w, c);
  Image img = read_image_file(path);
  if (img.height != h || img.width != w) throw FormatError("image size mismatch for " + path.string());
  return img;
}

nlohmann::json box_json(const std::optional<Box>& b) { return b ? nlohmann::json(*b) : nlohmann::json(nullptr); }

std::optional<Box> box_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<Box>();
}

void check_manifest_header(const nlohmann::json& m, const std::string& kind, const std::filesystem::path& dir) {
  if (!m.contains("format_version") || !m.contains("kind")) throw FormatError(dir.string() + ": not a dataset manifest");
  if (m.at("format_version").get<int>() != kManifestVersion)
    throw VersionError(dir.string() + ": manifest version " + m.at("format_version").dump());
  if (m.at("kind").get<std::string>() != kind)
    throw FormatError(dir.string() + ": expected a " + kind + " dataset, found " + m.at("kind").dump());
}

}  // namespace

void save_labeled(const LabeledDataset& data, const std::filesystem::path& dir, Encoding enc) {
  data.validate();
  std::filesystem::create_directories(dir / "images");
  nlohmann::json samples = nlohmann::json::array();
  std::vector<std::string> hashes(data.size());
  parallel_for(data.size(), default_jobs(), [&](std::size_t i) {
    hashes[i] = store_image(data.images[i], dir, image_name("images/", i, enc), enc);
  });
  for (std::size_t i = 0; i < data.size(); ++i)
    samples.push_back({{"label", data.labels[i]},
                       {"box", box_json(data.boxes[i])},
                       {"image", image_name("images/", i, enc)},
                       {"hash", hashes[i]}});
  const Image* first = data.images.empty() ? nullptr : &data.images.front();
  nlohmann::json manifest = {{"format_version", kManifestVersion},
                             {"kind", "labeled"},
                             {"num_classes", data.num_classes},
                             {"split", data.split},
                             {"image_shape", {first ? first->height : 0, first ? first->width : 0, first ? first->channels : 0}},
                             {"encoding", encoding_name(enc)},
                             {"provenance", data.provenance},
                             {"samples", samples}};
  write_json_atomic(dir / "manifest.json", manifest);
}

namespace {

LabeledDataset load_labeled_impl(const std::filesystem::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  check_manifest_header(m, "labeled", dir);
  LabeledDataset out;
  out.num_classes = m.at("num_classes").get<int>();
  out.split = m.value("split", std::string("train"));
  out.provenance = m.value("provenance", nlohmann::json::object());
  const auto shape = m.at("image_shape");
  const Encoding enc = encoding_from(m.at("encoding").get<std::string>());
  const auto& samples = m.at("samples");
  out.images.resize(samples.size());
  parallel_for(samples.size(), default_jobs(), [&](std::size_t i) {
    const auto& s = samples[i];
    out.images[i] = fetch_image(dir, s.at("image").get<std::string>(), s.value("hash", std::string()), enc,
                                shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>());
  });
  for (const auto& s : samples) {
    out.labels.push_back(s.at("label").get<int>());
    out.boxes.push_back(box_from(s.at("box")));
  }
  out.validate();
  return out;
}

}  // namespace

LabeledDataset load_labeled(const std::filesystem::path& dir) {
  try {
    return load_labeled_impl(dir);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": malformed manifest: " + e.what());
  }
}

void save_paired(const PairedDataset& data, const std::filesystem::path& dir, Encoding enc) {
  std::filesystem::create_directories(dir / "hq");
  std::filesystem::create_directories(dir / "lq");
  std::vector<std::pair<std::string, std::string>> hashes(data.size());
  parallel_for(data.size(), default_jobs(), [&](std::size_t i) {
    hashes[i].first = store_image(data.samples[i].x, dir, image_name("hq/", i, enc), enc);
    hashes[i].second = store_image(data.samples[i].z, dir, image_name("lq/", i, enc), enc);
  });
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    samples.push_back({{"label", s.y},
                       {"box", box_json(s.box)},
                       {"hq", image_name("hq/", i, enc)},
                       {"lq", image_name("lq/", i, enc)},
                       {"hq_hash", hashes[i].first},
                       {"lq_hash", hashes[i].second},
                       {"source_hash", s.source_hash},
                       {"seed", s.seed}});
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : data.skipped) skipped.push_back({{"index", s.index}, {"reason", s.reason}});
  const PairedSample* first = data.samples.empty() ? nullptr : &data.samples.front();
  nlohmann::json manifest = {
      {"format_version", kManifestVersion},
      {"kind", "paired"},
      {"num_classes", data.num_classes},
      {"split", data.split},
      {"image_shape", {first ? first->x.height : 0, first ? first->x.width : 0, first ? first->x.channels : 0}},
      {"encoding", encoding_name(enc)},
      {"transform", data.transform},
      {"stages", data.stages},
      {"seed", data.seed},
      {"samples", samples},
      {"skipped", skipped}};
  write_json_atomic(dir / "manifest.json", manifest);
}

namespace {

PairedDataset load_paired_impl(const std::filesystem::path& dir) {
  const auto m = read_json(dir / "manifest.json");
  check_manifest_header(m, "paired", dir);
  PairedDataset out;
  out.num_classes = m.at("num_classes").get<int>();
  out.split = m.value("split", std::string("train"));
  out.transform = m.at("transform").get<TransformSpec>();
  out.stages = m.value("stages", nlohmann::json::array());
  out.seed = m.at("seed").get<std::uint64_t>();
  const auto shape = m.at("image_shape");
  const int h = shape.at(0).get<int>(), w = shape.at(1).get<int>(), c = shape.at(2).get<int>();
  const Encoding enc = encoding_from(m.at("encoding").get<std::string>());
  const auto& samples = m.at("samples");
  out.samples.resize(samples.size());
  parallel_for(samples.size(), default_jobs(), [&](std::size_t i) {
    const auto& s = samples[i];
    auto& dst = out.samples[i];
    dst.x = fetch_image(dir, s.at("hq").get<std::string>(), s.value("hq_hash", std::string()), enc, h, w, c);
    dst.z = fetch_image(dir, s.at("lq").get<std::string>(), s.value("lq_hash", std::string()), enc, h, w, c);
    dst.y = s.at("label").get<int>();
    dst.box = box_from(s.at("box"));
    dst.source_hash = s.value("source_hash", std::string());
    dst.seed = s.value("seed", std::uint64_t{0});
  });
  for (const auto& s : m.value("skipped", nlohmann::json::array()))
    out.skipped.push_back({s.at("index").get<std::size_t>(), s.at("reason").get<std::string>()});
  return out;
}

}  // namespace

PairedDataset load_paired(const std::filesystem::path& dir) {
  try {
    return load_paired_impl(dir);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + ": malformed manifest: " + e.what());
  }
}

namespace {

void hash_append(std::string& blob, const Image& img) {
  const int dims[3] = {img.height, img.width, img.channels};
  blob.append(reinterpret_cast<const char*>(dims), sizeof(dims));
  blob.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size() * sizeof(float));
}

void hash_append(std::string& blob, int label, const std::optional<Box>& box) {
  const int meta[6] = {label, box ? 1 : 0, box ? box->x0 : 0, box ? box->y0 : 0, box ? box->x1 : 0, box ? box->y1 : 0};
  blob.append(reinterpret_cast<const char*>(meta), sizeof(meta));
}

}  // namespace

std::string dataset_hash(const LabeledDataset& data) {
  std::string blob = "labeled:" + std::to_string(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    hash_append(blob, data.labels[i], data.boxes[i]);
    hash_append(blob, data.images[i]);
  }
  return sha256_hex(blob);
}

std::string dataset_hash(const PairedDataset& data) {
  std::string blob = "paired:" + std::to_string(data.num_classes) + ":" + nlohmann::json(data.transform).dump();
  for (const auto& s : data.samples) {
    hash_append(blob, s.y, s.box);
    hash_append(blob, s.x);
    hash_append(blob, s.z);
  }
  return sha256_hex(blob);
}

}  // namespace cqd
