#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/tensor.hpp"

namespace cqd {

/// Dense H×W×C float image (interleaved channels), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  bool empty() const { return pixels.empty(); }
  bool same_size(const Image& o) const { return height == o.height && width == o.width && channels == o.channels; }
  bool operator==(const Image&) const = default;

  /// Clamps every value into [0, 1]; returns *this.
  Image& clip();
  std::string content_hash() const;
};

/// Pixel box, inclusive-exclusive: 0 <= x0 < x1 <= W, 0 <= y0 < y1 <= H.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  int area() const { return width() * height(); }
  bool valid_for(int image_w, int image_h) const {
    return 0 <= x0 && x0 < x1 && x1 <= image_w && 0 <= y0 && y0 < y1 && y1 <= image_h;
  }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Box&) const = default;
};

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);

/// Bilinear sample at continuous pixel coordinates (pixel centers at
/// integers), coordinates clamped to the image edge.
float sample_bilinear(const Image& img, double x, double y, int c);

/// Packs images into a model input batch [B×C×H×W].
Tensor to_batch(std::span<const Image* const> images);

}  // namespace cqd
