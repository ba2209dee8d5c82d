#include "cqd/image.hpp"

#include <algorithm>
#include <cmath>

#include "cqd/errors.hpp"
#include "cqd/io.hpp"

namespace cqd {

Image& Image::clip() {
  for (float& v : pixels) v = std::clamp(v, 0.0f, 1.0f);
  return *this;
}

std::string Image::content_hash() const {
  const int dims[3] = {height, width, channels};
  std::string blob(reinterpret_cast<const char*>(dims), sizeof(dims));
  blob.append(reinterpret_cast<const char*>(pixels.data()), pixels.size() * sizeof(float));
  return sha256_hex(blob);
}

void to_json(nlohmann::json& j, const Box& b) { j = {b.x0, b.y0, b.x1, b.y1}; }

void from_json(const nlohmann::json& j, Box& b) {
  b = {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

float sample_bilinear(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double tx = x - x0, ty = y - y0;
  const double top = (1.0 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c);
  const double bottom = (1.0 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c);
  return static_cast<float>((1.0 - ty) * top + ty * bottom);
}

Tensor to_batch(std::span<const Image* const> images) {
  CQD_REQUIRE(!images.empty(), "to_batch: no images");
  const Image& first = *images.front();
  const auto h = static_cast<std::size_t>(first.height), w = static_cast<std::size_t>(first.width),
             c = static_cast<std::size_t>(first.channels);
  Tensor t({images.size(), c, h, w});
  auto d = t.data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (!img.same_size(first)) throw ContractError("to_batch: images differ in size");
    float* dst = d.data() + n * c * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) dst[(ch * h + y) * w + x] = img.pixels[(y * w + x) * c + ch];
  }
  return t;
}

}  // namespace cqd
