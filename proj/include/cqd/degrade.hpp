#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cqd/image.hpp"

namespace cqd {

// --- resampling ---------------------------------------------------------------

/// Exact area-weighted average onto an out_h×out_w grid (fractional overlaps
/// weighted by coverage).
Image resize_area(const Image& img, int out_h, int out_w);
/// Bilinear resample with half-pixel-centre alignment and edge clamping.
Image resize_bilinear(const Image& img, int out_h, int out_w);
/// Pixel replication (each output pixel copies the input pixel covering its centre).
Image resize_nearest(const Image& img, int out_h, int out_w);

/// Crop `box` and resample it to out_h×out_w bilinearly.
Image crop_to_box(const Image& img, const Box& box, int out_h, int out_w);

enum class Upsample { Nearest, Bilinear };

/// Area-average down to s×s, then back up to the original size. With nearest
/// upsampling and s dividing the side, lowres is exactly idempotent.
Image lowres(const Image& img, int s, Upsample up = Upsample::Nearest);

/// Colourless edge image: forward-difference gradient magnitude of the
/// channel-mean, normalized by its 99th percentile, clipped to [0, 1] and
/// replicated to every channel.
Image edge_map(const Image& img);

// --- thin-plate splines ---------------------------------------------------------

struct Point2 {
  double x = 0.0, y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// f(p) = A·[1, x, y] + Σ_i w_i · U(|p − c_i|), U(r) = r² log r.
struct TpsMap {
  std::vector<Point2> centers;
  std::vector<std::array<double, 2>> weights;
  std::array<std::array<double, 3>, 2> affine{};  ///< rows: x', y'; cols: 1, x, y

  Point2 operator()(Point2 p) const;
  static TpsMap fit(const std::vector<Point2>& from, const std::vector<Point2>& to);
  static TpsMap identity(const std::vector<Point2>& centers);
};

/// Grid of control points displaced to `control_dst`. `forward` maps each
/// source control point onto its target; `backward` maps output pixels back
/// into the input and drives the distortion.
struct TpsWarp {
  int height = 0;
  int width = 0;
  int grid = 0;
  std::vector<Point2> control_src;
  std::vector<Point2> control_dst;
  TpsMap forward;
  TpsMap backward;

  Point2 operator()(Point2 p) const { return forward(p); }
};

/// Uniform grid × grid control points spanning the image.
std::vector<Point2> control_grid(int grid, int height, int width);
/// Warp through explicit control correspondences (zero displacement gives the exact identity).
TpsWarp tps_from_points(int height, int width, int grid, std::vector<Point2> src, std::vector<Point2> dst);
/// Random warp: every grid point shifted by N(0, sigma²) in x and y.
TpsWarp tps_fit(int grid, double sigma, std::uint64_t seed, int height, int width);
/// Backward warping with bilinear sampling; out-of-range samples clamp to the edge.
Image tps_distort(const Image& img, const TpsWarp& warp);

/// Displacement std-dev in pixels for an image side: 2 px at 224 scaled
/// proportionally (variance 4 px² at 224×224).
double default_tps_sigma(int side);
/// 14×14 from 224 px up, 7×7 below.
int default_tps_grid(int side);

// --- transform descriptors --------------------------------------------------------

enum class TransformKind { Identity, Localize, LowRes, Edges, Distort, LocalizeLowRes };

std::string to_string(TransformKind k);
TransformKind transform_kind_from_string(const std::string& s);

/// Describes how the low-quality view z is synthesized from x.
struct TransformSpec {
  TransformKind kind = TransformKind::Identity;
  int lowres_size = 16;
  Upsample upsample = Upsample::Nearest;
  /// Crop the high-quality view to the object box first (CUB-style). Ignored
  /// by Localize / LocalizeLowRes, which always crop the HQ view.
  bool crop_hq = false;
  int tps_grid = 0;        ///< 0 = default for the image size
  double tps_sigma = -1;   ///< negative = default for the image size

  bool needs_box() const;
  bool operator==(const TransformSpec&) const = default;
};

void to_json(nlohmann::json& j, const TransformSpec& t);
void from_json(const nlohmann::json& j, TransformSpec& t);

/// The paired (x, z) views of one instance plus the object box in z's frame.
struct ViewPair {
  Image hq;
  Image lq;
  std::optional<Box> lq_box;
  nlohmann::json stages = nlohmann::json::array();
};

/// HQ = object crop at full resolution; LQ = whole cluttered image at lowres(s).
ViewPair compound_lowres_noloc(const Image& img, const Box& box, int s, Upsample up = Upsample::Nearest);

/// Applies a descriptor to one image. Throws ContractError when a box is
/// required but missing.
ViewPair apply_transform(const TransformSpec& spec, const Image& img, const std::optional<Box>& box,
                         std::uint64_t sample_seed);

}  // namespace cqd
