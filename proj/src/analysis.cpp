#include "cqd/analysis.hpp"

#include <cmath>
#include <sstream>

#include "cqd/errors.hpp"
#include "cqd/ops.hpp"

namespace cqd {

std::vector<Image> input_gradients(const Model& model, std::span<const Image* const> images,
                                   std::span<const int> labels, std::size_t batch) {
  CQD_REQUIRE(images.size() == labels.size(), "input_gradients: one label per image");
  CQD_REQUIRE(batch > 0, "input_gradients: batch must be positive");
  for (int y : labels) CQD_REQUIRE(y >= 0 && y < model.num_classes(), "input_gradients: label out of range");

  std::vector<Image> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const std::size_t len = std::min(batch, images.size() - start);
    Tensor x = to_batch(images.subspan(start, len));
    x.set_requires_grad(true);
    Graph g;
    const Tensor logits = model.forward(g, x, false);
    const Tensor logp = ops::log(g, ops::softmax(g, logits));
    // Summing the selected log-likelihoods keeps each image's gradient separate.
    Tensor total = ops::sum(g, ops::mul(g, logp, ops::one_hot(labels.subspan(start, len), logits.dim(1))));
    g.backward(total);

    const auto grad = x.grad();
    const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
    for (std::size_t n = 0; n < len; ++n) {
      Image gi(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx) {
            const float v = grad[((n * c + ch) * h + yy) * w + xx];
            if (!std::isfinite(v)) throw NumericError("input_gradient: non-finite gradient");
            gi.at(static_cast<int>(yy), static_cast<int>(xx), static_cast<int>(ch)) = v;
          }
      out.push_back(std::move(gi));
    }
  }
  return out;
}

Image input_gradient(const Model& model, const Image& image, int label) {
  const Image* ptr = &image;
  return input_gradients(model, std::span<const Image* const>(&ptr, 1), std::span<const int>(&label, 1)).front();
}

Saliency pixel_grad_norm(const Image& grad) {
  Saliency s;
  s.height = grad.height;
  s.width = grad.width;
  s.values.resize(static_cast<std::size_t>(grad.height) * grad.width);
  for (int y = 0; y < grad.height; ++y)
    for (int x = 0; x < grad.width; ++x) {
      double acc = 0.0;
      for (int c = 0; c < grad.channels; ++c) acc += static_cast<double>(grad.at(y, x, c)) * grad.at(y, x, c);
      s.values[static_cast<std::size_t>(y) * grad.width + x] = static_cast<float>(std::sqrt(acc));
    }
  return s;
}

double tau(const Saliency& saliency, const Box& box) {
  CQD_REQUIRE(box.valid_for(saliency.width, saliency.height), "tau: box outside the saliency map");
  double inside = 0.0, total = 0.0;
  for (int y = 0; y < saliency.height; ++y)
    for (int x = 0; x < saliency.width; ++x) {
      const double v = saliency.at(y, x);
      total += v;
      if (box.contains(x, y)) inside += v;
    }
  if (!(total > 0.0)) throw NumericError("tau: total saliency mass is zero");
  return inside / total;
}

namespace {

std::optional<double> mean_of(const std::vector<TauRecord>& records, double TauRecord::*field) {
  if (records.empty()) return std::nullopt;
  double s = 0.0;
  for (const auto& r : records) s += r.*field;
  return s / static_cast<double>(records.size());
}

}  // namespace

std::optional<double> TauScatter::mean_tau_b() const { return mean_of(records, &TauRecord::tau_b); }
std::optional<double> TauScatter::mean_tau_cqd() const { return mean_of(records, &TauRecord::tau_cqd); }

std::optional<double> TauScatter::win_fraction() const {
  if (records.empty()) return std::nullopt;
  std::size_t wins = 0;
  for (const auto& r : records) wins += r.tau_cqd > r.tau_b;
  return static_cast<double>(wins) / static_cast<double>(records.size());
}

TauScatter tau_scatter(const Model& model_b, const Model& model_cqd, const LabeledDataset& data, std::size_t n) {
  data.validate();
  TauScatter out;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < data.size() && ids.size() < n; ++i) {
    if (data.boxes[i])
      ids.push_back(i);
    else
      out.skipped.emplace_back(i, "no box");
  }
  std::vector<const Image*> images;
  std::vector<int> labels;
  for (std::size_t i : ids) {
    images.push_back(&data.images[i]);
    labels.push_back(data.labels[i]);
  }
  const auto grads_b = input_gradients(model_b, images, labels);
  const auto grads_c = input_gradients(model_cqd, images, labels);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const Box& box = *data.boxes[ids[k]];
    try {
      out.records.push_back({ids[k], tau(pixel_grad_norm(grads_b[k]), box), tau(pixel_grad_norm(grads_c[k]), box), box});
    } catch (const NumericError& e) {
      out.skipped.emplace_back(ids[k], e.what());
    }
  }
  return out;
}

std::string tau_csv(const TauScatter& scatter) {
  std::ostringstream os;
  os.precision(9);
  os << "image_id,tau_b,tau_cqd,box_x0,box_y0,box_x1,box_y1\n";
  for (const auto& r : scatter.records)
    os << r.image_id << ',' << r.tau_b << ',' << r.tau_cqd << ',' << r.box.x0 << ',' << r.box.y0 << ',' << r.box.x1
       << ',' << r.box.y1 << '\n';
  return os.str();
}

nlohmann::json tau_summary(const TauScatter& scatter) {
  auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  auto skipped = nlohmann::json::array();
  for (const auto& [id, why] : scatter.skipped) skipped.push_back({{"image_id", id}, {"reason", why}});
  return {{"n", scatter.records.size()},
          {"defined", !scatter.records.empty()},
          {"mean_tau_b", opt(scatter.mean_tau_b())},
          {"mean_tau_cqd", opt(scatter.mean_tau_cqd())},
          {"win_fraction", opt(scatter.win_fraction())},
          {"skipped", skipped}};
}

}  // namespace cqd
