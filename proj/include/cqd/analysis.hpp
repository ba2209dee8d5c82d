#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/dataset.hpp"
#include "cqd/nets.hpp"

namespace cqd {

/// Per-pixel gradient magnitude map.
struct Saliency {
  int height = 0;
  int width = 0;
  std::vector<float> values;  ///< row-major, all >= 0
  std::string image_id;
  int label = -1;
  std::string model_id;

  float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// d log p_label / d image, with log p taken as log(max(softmax, ε)).
/// Returned in the image's H×W×C layout. Throws NumericError on a
/// non-finite gradient.
Image input_gradient(const Model& model, const Image& image, int label);
/// Same for many images; each image's gradient is independent of the batch.
std::vector<Image> input_gradients(const Model& model, std::span<const Image* const> images,
                                   std::span<const int> labels, std::size_t batch = 64);

/// L2 norm across channels at every pixel.
Saliency pixel_grad_norm(const Image& grad);

/// In-box saliency mass over total mass. Throws NumericError when the total is zero.
double tau(const Saliency& saliency, const Box& box);

struct TauRecord {
  std::size_t image_id = 0;
  double tau_b = 0.0;
  double tau_cqd = 0.0;
  Box box;
};

struct TauScatter {
  std::vector<TauRecord> records;
  /// Images left out, with the reason (missing box, zero gradient mass).
  std::vector<std::pair<std::size_t, std::string>> skipped;

  /// Mean τ per model and the fraction of records with τ_cqd > τ_b; empty when
  /// there are no records.
  std::optional<double> mean_tau_b() const;
  std::optional<double> mean_tau_cqd() const;
  std::optional<double> win_fraction() const;
};

/// τ for the first n images that have boxes (all of them when fewer).
TauScatter tau_scatter(const Model& model_b, const Model& model_cqd, const LabeledDataset& data, std::size_t n);

/// `image_id,tau_b,tau_cqd,box_x0,box_y0,box_x1,box_y1` rows.
std::string tau_csv(const TauScatter& scatter);
nlohmann::json tau_summary(const TauScatter& scatter);

}  // namespace cqd
