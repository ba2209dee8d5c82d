#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cqd/tensor.hpp"

namespace cqd {

struct ConvBlock {
  int filters = 8;
  int kernel = 3;
  int stride = 1;
  int pool = 2;  ///< max-pool window (= stride); 1 disables pooling

  bool operator==(const ConvBlock&) const = default;
};

enum class DepthClass { Shallow, Deep };

/// Sequential CNN description: conv blocks (conv -> relu -> optional pool),
/// one hidden fully connected layer, then the k-way classifier.
struct ArchSpec {
  std::string name = "shallow";
  std::vector<ConvBlock> blocks;
  int hidden_dim = 64;
  int input_h = 64;
  int input_w = 64;
  int input_c = 3;
  DepthClass depth = DepthClass::Shallow;

  /// Desk-scale stand-ins for a five-layer and a very deep VGG.
  static ArchSpec shallow(int side = 64, int channels = 3);
  static ArchSpec deep(int side = 64, int channels = 3);

  /// Spatial size (h, w, channels) of the last conv block's output.
  /// Throws ContractError when any stage collapses below 1 pixel.
  struct FeatureShape {
    int h, w, c;
  };
  FeatureShape feature_shape() const;

  bool operator==(const ArchSpec&) const = default;
};

void to_json(nlohmann::json& j, const ArchSpec& a);
void from_json(const nlohmann::json& j, ArchSpec& a);

/// Feed-forward classifier g or f. Copying a Model deep-copies its parameters.
class Model {
 public:
  Model() = default;
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ArchSpec& arch() const { return arch_; }
  int num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }

  /// Logits [B×K] for a batch [B×C×H×W]. With `track_params` the parameter
  /// tensors join the graph and receive gradients; otherwise they are read
  /// through detached handles and only the input can receive a gradient.
  Tensor forward(Graph& g, const Tensor& x, bool track_params = false) const;
  /// Output of the hidden layer (everything except the classifier).
  Tensor features(Graph& g, const Tensor& x, bool track_params = false) const;

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  std::size_t parameter_count() const;
  void zero_grad();
  /// Index of the first classifier tensor within params().
  std::size_t classifier_offset() const { return params_.size() - 2; }

 private:
  friend Model build_model(const ArchSpec& arch, int num_classes, std::uint64_t seed);
  friend Model reinit_classifier(const Model& model, int k, std::uint64_t seed);
  friend Model load_checkpoint(const std::filesystem::path& path);

  void add_param(std::string name, Tensor t);

  ArchSpec arch_;
  int num_classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

/// He-uniform weights, zero biases; deterministic per (arch, num_classes, seed).
Model build_model(const ArchSpec& arch, int num_classes, std::uint64_t seed);

/// Copy of `model` whose final layer is replaced by a freshly initialized
/// k-way classifier.
Model reinit_classifier(const Model& model, int k, std::uint64_t seed);

/// Binary checkpoint: "CQDC", u16 version, u32 header length, JSON header,
/// little-endian f32 payloads in header order.
inline constexpr std::uint16_t kCheckpointVersion = 1;
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// Same parameter names, shapes and bit-identical values.
bool params_bit_equal(const Model& a, const Model& b);

}  // namespace cqd
