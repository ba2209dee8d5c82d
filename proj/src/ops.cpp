#include "cqd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

#include "cqd/errors.hpp"

namespace cqd::ops {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape()));
}

Tensor make_output(Shape shape, bool needs_grad) {
  Tensor out(std::move(shape));
  out.set_requires_grad(needs_grad);
  return out;
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = make_output(a.shape(), any_grad({&a, &b}));
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    g.record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      for (Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gt = t->ensure_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gt[i] += go[i];
      }
    });
  }
  return out;
}

Tensor scale(Graph& g, const Tensor& a, float s) {
  Tensor out = make_output(a.shape(), a.requires_grad());
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
  if (out.requires_grad()) {
    g.record([a = a, out = out, s]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = make_output(a.shape(), any_grad({&a, &b}));
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    g.record([a = a, b = b, out = out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        auto y = b.data();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        auto x = a.data();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = make_output({1}, a.requires_grad());
  out.data()[0] = static_cast<float>(acc);
  if (out.requires_grad()) {
    g.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      float go = out.grad()[0];
      for (float& v : a.ensure_grad()) v += go;
    });
  }
  return out;
}

Tensor mean(Graph& g, const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of empty tensor");
  return scale(g, sum(g, a), 1.0f / static_cast<float>(a.size()));
}

Tensor reshape(Graph& g, const Tensor& a, Shape shape) {
  Tensor out = a.reshaped(std::move(shape));
  out.set_requires_grad(a.requires_grad());
  if (out.requires_grad()) {
    g.record([a = a, out = out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto ga = a.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
  if (out.requires_grad()) {
    g.record([x = x, out = out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.ensure_grad();
      auto in = x.data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (in[i] > 0.0f) gx[i] += go[i];
    });
  }
  return out;
}

Tensor log(Graph& g, const Tensor& p) {
  Tensor out = make_output(p.shape(), p.requires_grad());
  auto o = out.data();
  auto in = p.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::log(std::max(in[i], kProbEpsilon));
  if (out.requires_grad()) {
    g.record([p = p, out = out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gp = p.ensure_grad();
      auto in = p.data();
      for (std::size_t i = 0; i < go.size(); ++i)
        if (in[i] > kProbEpsilon) gp[i] += go[i] / in[i];
    });
  }
  return out;
}

Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const std::size_t batch = x.dim(0), in = x.dim(1), outs = w.dim(0);
  if (w.dim(1) != in)
    throw ContractError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(w.shape()));
  if (b.defined() && b.size() != outs) throw ContractError("linear: bias length mismatch");

  Tensor out = make_output({batch, outs}, any_grad({&x, &w, &b}));
  {
    CMapMat X(x.data().data(), batch, in);
    CMapMat W(w.data().data(), outs, in);
    MapMat Y(out.data().data(), batch, outs);
    Y.noalias() = X * W.transpose();
    if (b.defined()) {
      Eigen::Map<const Eigen::RowVectorXf> B(b.data().data(), outs);
      Y.rowwise() += B;
    }
  }
  if (out.requires_grad()) {
    g.record([x = x, w = w, b = b, out = out, batch, in, outs]() mutable {
      if (!out.has_grad()) return;
      CMapMat G(out.grad().data(), batch, outs);
      if (x.requires_grad()) {
        MapMat GX(x.ensure_grad().data(), batch, in);
        GX.noalias() += G * CMapMat(w.data().data(), outs, in);
      }
      if (w.requires_grad()) {
        MapMat GW(w.ensure_grad().data(), outs, in);
        GW.noalias() += G.transpose() * CMapMat(x.data().data(), batch, in);
      }
      if (b.defined() && b.requires_grad()) {
        Eigen::Map<Eigen::RowVectorXf> GB(b.ensure_grad().data(), outs);
        GB += G.colwise().sum();
      }
    });
  }
  return out;
}

namespace {

struct ConvGeom {
  std::size_t batch, channels, height, width;
  std::size_t filters, k, stride, pad;
  std::size_t out_h, out_w;
  std::size_t patch() const { return channels * k * k; }
  std::size_t out_area() const { return out_h * out_w; }
};

// Column matrix layout: row = (c, ki, kj) patch index, column = n·area + pixel,
// with `ld` the row stride (= batch·area). One GEMM then covers the batch.
void im2col(const float* img, const ConvGeom& geo, float* cols, std::size_t ld) {
  for (std::size_t c = 0; c < geo.channels; ++c) {
    for (std::size_t ki = 0; ki < geo.k; ++ki) {
      for (std::size_t kj = 0; kj < geo.k; ++kj) {
        float* row = cols + ((c * geo.k + ki) * geo.k + kj) * ld;
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ki) - static_cast<long>(geo.pad);
          float* dst = row + oy * geo.out_w;
          if (iy < 0 || iy >= static_cast<long>(geo.height)) {
            std::fill(dst, dst + geo.out_w, 0.0f);
            continue;
          }
          const float* src = img + (c * geo.height + static_cast<std::size_t>(iy)) * geo.width;
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + kj) - static_cast<long>(geo.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(geo.width)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeom& geo, float* img, std::size_t ld) {
  for (std::size_t c = 0; c < geo.channels; ++c) {
    for (std::size_t ki = 0; ki < geo.k; ++ki) {
      for (std::size_t kj = 0; kj < geo.k; ++kj) {
        const float* row = cols + ((c * geo.k + ki) * geo.k + kj) * ld;
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const long iy = static_cast<long>(oy * geo.stride + ki) - static_cast<long>(geo.pad);
          if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
          float* dst = img + (c * geo.height + static_cast<std::size_t>(iy)) * geo.width;
          const float* src = row + oy * geo.out_w;
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const long ix = static_cast<long>(ox * geo.stride + kj) - static_cast<long>(geo.pad);
            if (ix >= 0 && ix < static_cast<long>(geo.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  CQD_REQUIRE(stride >= 1, "conv2d: stride must be >= 1");
  ConvGeom geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), stride, pad, 0, 0};
  if (kernel.dim(1) != geo.channels || kernel.dim(3) != geo.k)
    throw ContractError("conv2d: kernel " + shape_str(kernel.shape()) + " incompatible with input " +
                        shape_str(x.shape()));
  if (geo.k > geo.height + 2 * pad || geo.k > geo.width + 2 * pad)
    throw ContractError("conv2d: kernel larger than padded input");
  if (b.defined() && b.size() != geo.filters) throw ContractError("conv2d: bias length mismatch");
  geo.out_h = (geo.height + 2 * pad - geo.k) / stride + 1;
  geo.out_w = (geo.width + 2 * pad - geo.k) / stride + 1;

  const std::size_t patch = geo.patch(), area = geo.out_area(), ld = geo.batch * area;
  const std::size_t in_plane = geo.channels * geo.height * geo.width;
  Tensor out = make_output({geo.batch, geo.filters, geo.out_h, geo.out_w}, any_grad({&x, &kernel, &b}));
  auto cols = std::make_shared<FloatBuffer>(patch * ld);
  for (std::size_t n = 0; n < geo.batch; ++n)
    im2col(x.data().data() + n * in_plane, geo, cols->data() + n * area, ld);

  RowMat y = CMapMat(kernel.data().data(), geo.filters, patch) * CMapMat(cols->data(), patch, ld);
  if (b.defined()) y.colwise() += Eigen::Map<const Eigen::VectorXf>(b.data().data(), geo.filters);
  auto o = out.data();
  for (std::size_t n = 0; n < geo.batch; ++n)
    for (std::size_t f = 0; f < geo.filters; ++f)
      std::copy_n(y.data() + f * ld + n * area, area, o.data() + (n * geo.filters + f) * area);

  if (out.requires_grad()) {
    g.record([x = x, kernel = kernel, b = b, out = out, cols, geo]() mutable {
      if (!out.has_grad()) return;
      const std::size_t patch = geo.patch(), area = geo.out_area(), ld = geo.batch * area;
      const std::size_t in_plane = geo.channels * geo.height * geo.width;
      RowMat gy(geo.filters, ld);
      auto go = out.grad();
      for (std::size_t n = 0; n < geo.batch; ++n)
        for (std::size_t f = 0; f < geo.filters; ++f)
          std::copy_n(go.data() + (n * geo.filters + f) * area, area, gy.data() + f * ld + n * area);
      if (kernel.requires_grad()) {
        MapMat GK(kernel.ensure_grad().data(), geo.filters, patch);
        GK.noalias() += gy * CMapMat(cols->data(), patch, ld).transpose();
      }
      if (b.defined() && b.requires_grad()) {
        Eigen::Map<Eigen::VectorXf> GB(b.ensure_grad().data(), geo.filters);
        GB += gy.rowwise().sum();
      }
      if (x.requires_grad()) {
        // Reuse the column buffer for d(cols); forward no longer needs it.
        MapMat DC(cols->data(), patch, ld);
        DC.noalias() = CMapMat(kernel.data().data(), geo.filters, patch).transpose() * gy;
        auto gx = x.ensure_grad();
        for (std::size_t n = 0; n < geo.batch; ++n)
          col2im_add(cols->data() + n * area, geo, gx.data() + n * in_plane, ld);
      }
    });
  }
  return out;
}

Tensor maxpool2d(Graph& g, const Tensor& x, std::size_t k, std::size_t stride) {
  require_rank(x, 4, "maxpool2d");
  CQD_REQUIRE(k >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h || k > w) throw ContractError("maxpool2d: window larger than input " + shape_str(x.shape()));
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor out = make_output({batch, ch, oh, ow}, x.requires_grad());
  auto arg = std::make_shared<std::vector<std::uint32_t>>(out.size());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const float* src = in.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t oi = (plane * oh + oy) * ow + ox;
        o[oi] = src[best];
        (*arg)[oi] = static_cast<std::uint32_t>(plane * h * w + best);
      }
    }
  }
  if (out.requires_grad()) {
    g.record([x = x, out = out, arg]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[(*arg)[i]] += go[i];
    });
  }
  return out;
}

namespace {

void softmax_row(const float* z, float* p, std::size_t k) {
  float m = -std::numeric_limits<float>::infinity();
  for (std::size_t j = 0; j < k; ++j) m = std::max(m, z[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[j] - m));
  for (std::size_t j = 0; j < k; ++j) p[j] = static_cast<float>(std::exp(static_cast<double>(z[j] - m)) / total);
}

void check_probability_input(const Tensor& t, const char* op) {
  require_rank(t, 2, op);
  if (t.dim(1) < 2) throw ContractError(std::string(op) + ": need at least two classes");
  t.check_finite(op);
}

}  // namespace

Tensor softmax(Graph& g, const Tensor& logits) {
  check_probability_input(logits, "softmax");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  Tensor out = make_output(logits.shape(), logits.requires_grad());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(logits.data().data() + r * k, out.data().data() + r * k, k);
  if (out.requires_grad()) {
    g.record([logits = logits, out = out, rows, k]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto p = out.data();
      auto gz = logits.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(p[r * k + j]) * go[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gz[r * k + j] += static_cast<float>(p[r * k + j] * (go[r * k + j] - dot));
      }
    });
  }
  return out;
}

Tensor log_softmax(Graph& g, const Tensor& logits) {
  check_probability_input(logits, "log_softmax");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  Tensor out = make_output(logits.shape(), logits.requires_grad());
  auto z = logits.data();
  auto o = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    float m = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, z[r * k + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(z[r * k + j] - m));
    const double lse = m + std::log(total);
    for (std::size_t j = 0; j < k; ++j) o[r * k + j] = static_cast<float>(z[r * k + j] - lse);
  }
  if (out.requires_grad()) {
    g.record([logits = logits, out = out, rows, k]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto l = out.data();
      auto gz = logits.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += go[r * k + j];
        for (std::size_t j = 0; j < k; ++j)
          gz[r * k + j] += static_cast<float>(go[r * k + j] - std::exp(static_cast<double>(l[r * k + j])) * total);
      }
    });
  }
  return out;
}

Tensor cross_entropy(Graph& g, const Tensor& p, const Tensor& q) {
  require_rank(p, 2, "cross_entropy");
  require_same_shape(p, q, "cross_entropy");
  const std::size_t rows = p.dim(0), k = p.dim(1);
  CQD_REQUIRE(rows > 0, "cross_entropy: empty batch");
  auto pd = p.data();
  auto qd = q.data();
  double total = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i)
    total -= static_cast<double>(qd[i]) * std::log(static_cast<double>(std::max(pd[i], kProbEpsilon)));
  Tensor out = make_output({1}, any_grad({&p, &q}));
  out.data()[0] = static_cast<float>(total / static_cast<double>(rows));
  if (out.requires_grad()) {
    g.record([p = p, q = q, out = out, rows, k]() mutable {
      if (!out.has_grad()) return;
      const double go = out.grad()[0] / static_cast<double>(rows);
      auto pd = p.data();
      auto qd = q.data();
      if (p.requires_grad()) {
        auto gp = p.ensure_grad();
        for (std::size_t i = 0; i < rows * k; ++i)
          if (pd[i] > kProbEpsilon) gp[i] += static_cast<float>(-go * qd[i] / pd[i]);
      }
      if (q.requires_grad()) {
        auto gq = q.ensure_grad();
        for (std::size_t i = 0; i < rows * k; ++i)
          gq[i] += static_cast<float>(-go * std::log(static_cast<double>(std::max(pd[i], kProbEpsilon))));
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const Tensor& q) {
  check_probability_input(logits, "softmax_cross_entropy");
  require_same_shape(logits, q, "softmax_cross_entropy");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  const double log_floor = std::log(static_cast<double>(kProbEpsilon));
  auto z = logits.data();
  auto qd = q.data();
  // Cache log-probabilities (double) for backward.
  auto logp = std::make_shared<std::vector<double>>(rows * k);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) m = std::max(m, static_cast<double>(z[r * k + j]));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[r * k + j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) {
      const double l = z[r * k + j] - lse;
      (*logp)[r * k + j] = l;
      total -= qd[r * k + j] * std::max(l, log_floor);
    }
  }
  Tensor out = make_output({1}, any_grad({&logits, &q}));
  out.data()[0] = static_cast<float>(total / static_cast<double>(rows));
  if (out.requires_grad()) {
    g.record([logits = logits, q = q, out = out, logp, rows, k, log_floor]() mutable {
      if (!out.has_grad()) return;
      const double go = out.grad()[0] / static_cast<double>(rows);
      auto qd = q.data();
      const auto& l = *logp;
      if (logits.requires_grad()) {
        auto gz = logits.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double active_mass = 0.0;
          for (std::size_t j = 0; j < k; ++j)
            if (l[r * k + j] > log_floor) active_mass += qd[r * k + j];
          for (std::size_t j = 0; j < k; ++j) {
            const std::size_t i = r * k + j;
            const double own = l[i] > log_floor ? qd[i] : 0.0;
            gz[i] += static_cast<float>(go * (std::exp(l[i]) * active_mass - own));
          }
        }
      }
      if (q.requires_grad()) {
        auto gq = q.ensure_grad();
        for (std::size_t i = 0; i < rows * k; ++i) gq[i] += static_cast<float>(-go * std::max(l[i], log_floor));
      }
    });
  }
  return out;
}

Tensor mse(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "mse");
  require_same_shape(a, b, "mse");
  const std::size_t rows = a.dim(0), k = a.dim(1);
  auto x = a.data();
  auto y = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - y[i];
    total += d * d;
  }
  const double norm = static_cast<double>(rows * k);
  Tensor out = make_output({1}, any_grad({&a, &b}));
  out.data()[0] = static_cast<float>(total / norm);
  if (out.requires_grad()) {
    g.record([a = a, b = b, out = out, norm]() mutable {
      if (!out.has_grad()) return;
      const double go = out.grad()[0] * 2.0 / norm;
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += static_cast<float>(go * (x[i] - y[i]));
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < x.size(); ++i) gb[i] -= static_cast<float>(go * (x[i] - y[i]));
      }
    });
  }
  return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  Tensor t({labels.size(), num_classes});
  auto d = t.data();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw ContractError("label " + std::to_string(labels[i]) + " out of range");
    d[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return t;
}

std::vector<int> argmax_rows(const Tensor& scores) {
  require_rank(scores, 2, "argmax_rows");
  const std::size_t rows = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(rows);
  auto d = scores.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (d[r * k + j] > d[r * k + best]) best = j;  // strict: ties keep the lowest index
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cqd::ops
