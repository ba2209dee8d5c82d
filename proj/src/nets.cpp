#include "cqd/nets.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"
#include "cqd/ops.hpp"

namespace cqd {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

ArchSpec ArchSpec::shallow(int side, int channels) {
  ArchSpec a;
  a.name = "shallow";
  a.blocks = {{8, 5, 2, 2}, {16, 3, 1, 2}, {32, 3, 1, 2}};
  a.hidden_dim = 64;
  a.input_h = a.input_w = side;
  a.input_c = channels;
  a.depth = DepthClass::Shallow;
  return a;
}

ArchSpec ArchSpec::deep(int side, int channels) {
  ArchSpec a;
  a.name = "deep";
  a.blocks = {{8, 5, 2, 1}, {8, 3, 1, 2}, {16, 3, 1, 1}, {16, 3, 1, 2}, {32, 3, 1, 1}, {32, 3, 1, 2}};
  a.hidden_dim = 64;
  a.input_h = a.input_w = side;
  a.input_c = channels;
  a.depth = DepthClass::Deep;
  return a;
}

ArchSpec::FeatureShape ArchSpec::feature_shape() const {
  if (blocks.empty()) throw ContractError("arch '" + name + "': needs at least one conv block");
  if (input_h < 1 || input_w < 1 || input_c < 1) throw ContractError("arch '" + name + "': bad input size");
  if (hidden_dim < 1) throw ContractError("arch '" + name + "': hidden_dim must be positive");
  int h = input_h, w = input_w, c = input_c;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.filters < 1 || b.kernel < 1 || b.stride < 1 || b.pool < 1)
      throw ContractError("arch '" + name + "': block " + std::to_string(i) + " has non-positive fields");
    const int pad = b.kernel / 2;
    if (b.kernel > h + 2 * pad || b.kernel > w + 2 * pad)
      throw ContractError("arch '" + name + "': block " + std::to_string(i) + " kernel exceeds feature map");
    h = (h + 2 * pad - b.kernel) / b.stride + 1;
    w = (w + 2 * pad - b.kernel) / b.stride + 1;
    if (b.pool > 1) {
      if (h < b.pool || w < b.pool)
        throw ContractError("arch '" + name + "': spatial dims collapse below 1 at block " + std::to_string(i));
      h = (h - b.pool) / b.pool + 1;
      w = (w - b.pool) / b.pool + 1;
    }
    c = b.filters;
  }
  return {h, w, c};
}

void to_json(nlohmann::json& j, const ArchSpec& a) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : a.blocks)
    blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}, {"stride", b.stride}, {"pool", b.pool}});
  j = {{"name", a.name},
       {"blocks", blocks},
       {"hidden_dim", a.hidden_dim},
       {"input", {a.input_h, a.input_w, a.input_c}},
       {"depth_class", a.depth == DepthClass::Deep ? "deep" : "shallow"}};
}

void from_json(const nlohmann::json& j, ArchSpec& a) {
  a.name = j.at("name").get<std::string>();
  a.blocks.clear();
  for (const auto& b : j.at("blocks"))
    a.blocks.push_back({b.at("filters").get<int>(), b.at("kernel").get<int>(), b.at("stride").get<int>(),
                        b.value("pool", 1)});
  a.hidden_dim = j.at("hidden_dim").get<int>();
  const auto& in = j.at("input");
  a.input_h = in.at(0).get<int>();
  a.input_w = in.at(1).get<int>();
  a.input_c = in.at(2).get<int>();
  const auto depth = j.value("depth_class", std::string("shallow"));
  if (depth != "shallow" && depth != "deep") throw ConfigError("unknown depth_class '" + depth + "'");
  a.depth = depth == "deep" ? DepthClass::Deep : DepthClass::Shallow;
}

Model::Model(const Model& other)
    : arch_(other.arch_), num_classes_(other.num_classes_), seed_(other.seed_), names_(other.names_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(p.clone());
}

Model& Model::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Model::add_param(std::string name, Tensor t) {
  t.set_requires_grad(true);
  names_.push_back(std::move(name));
  params_.push_back(std::move(t));
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor Model::features(Graph& g, const Tensor& x, bool track_params) const {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(arch_.input_c) ||
      x.dim(2) != static_cast<std::size_t>(arch_.input_h) || x.dim(3) != static_cast<std::size_t>(arch_.input_w))
    throw ContractError("model '" + arch_.name + "' expects input [B×" + std::to_string(arch_.input_c) + "×" +
                        std::to_string(arch_.input_h) + "×" + std::to_string(arch_.input_w) + "], got " +
                        shape_str(x.shape()));
  auto param = [&](std::size_t i) { return track_params ? params_[i] : params_[i].detach(); };
  Tensor h = x;
  std::size_t idx = 0;
  for (const auto& b : arch_.blocks) {
    h = ops::conv2d(g, h, param(idx), param(idx + 1), static_cast<std::size_t>(b.stride),
                    static_cast<std::size_t>(b.kernel / 2));
    idx += 2;
    h = ops::relu(g, h);
    if (b.pool > 1) h = ops::maxpool2d(g, h, static_cast<std::size_t>(b.pool), static_cast<std::size_t>(b.pool));
  }
  const std::size_t batch = h.dim(0);
  h = ops::reshape(g, h, {batch, h.size() / batch});
  h = ops::relu(g, ops::linear(g, h, param(idx), param(idx + 1)));
  return h;
}

Tensor Model::forward(Graph& g, const Tensor& x, bool track_params) const {
  Tensor h = features(g, x, track_params);
  const std::size_t c = classifier_offset();
  const Tensor w = track_params ? params_[c] : params_[c].detach();
  const Tensor b = track_params ? params_[c + 1] : params_[c + 1].detach();
  return ops::linear(g, h, w, b);
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::uniform_real_distribution<float> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = dist(rng);
  return t;
}

constexpr std::uint64_t kClassifierStream = 0xC1A55;

}  // namespace

Model build_model(const ArchSpec& arch, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ContractError("build_model: num_classes must be >= 2");
  const auto feat = arch.feature_shape();
  Model m;
  m.arch_ = arch;
  m.num_classes_ = num_classes;
  m.seed_ = seed;
  std::mt19937_64 rng(seed);
  std::size_t in_c = static_cast<std::size_t>(arch.input_c);
  for (std::size_t i = 0; i < arch.blocks.size(); ++i) {
    const auto& b = arch.blocks[i];
    const auto f = static_cast<std::size_t>(b.filters), k = static_cast<std::size_t>(b.kernel);
    m.add_param("conv" + std::to_string(i) + ".weight", he_uniform({f, in_c, k, k}, in_c * k * k, rng));
    m.add_param("conv" + std::to_string(i) + ".bias", Tensor({f}));
    in_c = f;
  }
  const auto flat = static_cast<std::size_t>(feat.h * feat.w * feat.c);
  const auto hidden = static_cast<std::size_t>(arch.hidden_dim);
  m.add_param("fc.weight", he_uniform({hidden, flat}, flat, rng));
  m.add_param("fc.bias", Tensor({hidden}));
  std::mt19937_64 head_rng(derive_seed(seed, kClassifierStream));
  m.add_param("classifier.weight", he_uniform({static_cast<std::size_t>(num_classes), hidden}, hidden, head_rng));
  m.add_param("classifier.bias", Tensor({static_cast<std::size_t>(num_classes)}));
  return m;
}

Model reinit_classifier(const Model& model, int k, std::uint64_t seed) {
  if (k < 2) throw ContractError("reinit_classifier: k must be >= 2");
  Model m(model);
  m.num_classes_ = k;
  const std::size_t c = m.classifier_offset();
  const auto hidden = static_cast<std::size_t>(m.arch_.hidden_dim);
  // Distinct stream from build_model's head so that the same seed still
  // yields a different classifier.
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kClassifierStream), 1));
  m.params_[c] = he_uniform({static_cast<std::size_t>(k), hidden}, hidden, rng);
  m.params_[c].set_requires_grad(true);
  m.params_[c + 1] = Tensor({static_cast<std::size_t>(k)});
  m.params_[c + 1].set_requires_grad(true);
  return m;
}

bool params_bit_equal(const Model& a, const Model& b) {
  if (a.param_names() != b.param_names()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& x = a.params()[i];
    const auto& y = b.params()[i];
    if (x.shape() != y.shape()) return false;
    if (std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

// --- checkpoint -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'Q', 'D', 'C'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    const std::size_t bytes = p.size() * sizeof(float);
    tensors.push_back({{"name", model.param_names()[i]}, {"shape", p.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  nlohmann::json header = {{"arch", model.arch()},
                           {"num_classes", model.num_classes()},
                           {"seed", model.seed()},
                           {"tensors", tensors},
                           {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_le<std::uint16_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& p : model.params())
    out.append(reinterpret_cast<const char*>(p.data().data()), p.size() * sizeof(float));
  write_file_atomic(path, out);
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  const std::string where = path.string();
  if (in.size() < 4) throw TruncatedError(where + ": file shorter than magic");
  if (std::memcmp(in.data(), kMagic, 4) != 0) throw FormatError(where + ": bad magic, not a CQDC checkpoint");
  if (in.size() < 10) throw TruncatedError(where + ": truncated preamble");
  const auto version = get_le<std::uint16_t>(in, 4);
  if (version != kCheckpointVersion)
    throw VersionError(where + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const auto header_len = get_le<std::uint32_t>(in, 6);
  if (in.size() < 10 + static_cast<std::size_t>(header_len)) throw TruncatedError(where + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.substr(10, header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(where + ": header is not valid JSON: " + e.what());
  }

  Model m;
  std::vector<nlohmann::json> entries;
  std::size_t payload_bytes = 0;
  try {
    m.arch_ = header.at("arch").get<ArchSpec>();
    m.num_classes_ = header.at("num_classes").get<int>();
    m.seed_ = header.at("seed").get<std::uint64_t>();
    entries = header.at("tensors").get<std::vector<nlohmann::json>>();
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed header: " + e.what());
  }

  const std::size_t base = 10 + header_len;
  if (in.size() - base < payload_bytes) throw TruncatedError(where + ": payload truncated");
  if (in.size() - base > payload_bytes) throw PayloadLengthError(where + ": trailing bytes after payload");

  // The arch determines the expected tensor table; the header must agree.
  const Model reference = build_model(m.arch_, m.num_classes_, 0);
  if (entries.size() != reference.params().size())
    throw FormatError(where + ": tensor table does not match architecture");
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto name = e.at("name").get<std::string>();
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto bytes = e.at("bytes").get<std::size_t>();
    if (name != reference.param_names()[i]) throw FormatError(where + ": unexpected tensor '" + name + "'");
    if (shape != reference.params()[i].shape())
      throw PayloadLengthError(where + ": tensor '" + name + "' shape " + shape_str(shape) +
                               " does not match architecture");
    if (bytes != numel(shape) * sizeof(float))
      throw PayloadLengthError(where + ": tensor '" + name + "' declares " + std::to_string(bytes) +
                               " bytes for shape " + shape_str(shape));
    if (offset != expected_offset || offset + bytes > payload_bytes)
      throw PayloadLengthError(where + ": tensor '" + name + "' offset inconsistent with payload");
    std::vector<float> values(numel(shape));
    std::memcpy(values.data(), in.data() + base + offset, bytes);
    m.add_param(name, Tensor(shape, std::move(values)));
    expected_offset += bytes;
  }
  if (expected_offset != payload_bytes) throw PayloadLengthError(where + ": payload size mismatch");
  for (const auto& p : m.params_) p.check_finite("checkpoint");
  return m;
}

}  // namespace cqd
