#pragma once

#include "cqd/tensor.hpp"

namespace cqd::ops {

/// Probability floor applied before every log.
inline constexpr float kProbEpsilon = 1e-12f;

// Elementwise / reductions --------------------------------------------------

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, float s);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);
Tensor reshape(Graph& g, const Tensor& a, Shape shape);
/// Elementwise log(max(p, ε)); no gradient flows where the floor is active.
Tensor log(Graph& g, const Tensor& p);

// Network primitives (NCHW layout) -----------------------------------------

Tensor relu(Graph& g, const Tensor& x);

/// y[B×O] = x[B×I] · wᵀ + b. `b` may be undefined.
Tensor linear(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b);

/// Cross-correlation of x[B×C×H×W] with kernel[F×C×k×k]; `b` (length F) may
/// be undefined. Output is B×F×H'×W' with H' = (H + 2·pad − k)/stride + 1.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& b,
              std::size_t stride, std::size_t pad);

/// Max over k×k windows with the given stride, no padding.
Tensor maxpool2d(Graph& g, const Tensor& x, std::size_t k, std::size_t stride);

// Probabilities and losses --------------------------------------------------

/// Row-wise softmax of a [B×K] tensor, max-subtracted.
Tensor softmax(Graph& g, const Tensor& logits);
Tensor log_softmax(Graph& g, const Tensor& logits);

/// Mean over rows of −Σ q·log(max(p, ε)). Rows of p and q must each sum to 1.
Tensor cross_entropy(Graph& g, const Tensor& p, const Tensor& q);

/// Same value as cross_entropy(softmax(logits), q) computed from logits.
/// The log-probability is floored at log ε, matching the probability clamp.
Tensor softmax_cross_entropy(Graph& g, const Tensor& logits, const Tensor& q);

/// Mean over rows of Σ (a − b)² / K.
Tensor mse(Graph& g, const Tensor& a, const Tensor& b);

/// Ungraphed helpers.
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);
std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace cqd::ops
