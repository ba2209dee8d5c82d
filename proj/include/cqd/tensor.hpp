#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace cqd {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);

/// Allocator handing out 64-byte aligned blocks. Vectorized kernels treat an
/// unaligned head differently, so buffer placement would otherwise leak into
/// the rounding of results.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;
std::string shape_str(const Shape& shape);

/// Dense row-major f32 tensor with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage. `clone()` makes a deep copy and
/// `detach()` returns a handle onto the same storage that gradient tracking
/// ignores. Gradients are accumulated into the storage, so every handle that
/// requires grad and shares storage sees the same `grad()`.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::span<const float> values);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<float> grad();
  std::span<const float> grad() const;
  /// Allocates (zeroed) gradient storage if missing and returns it.
  std::span<float> ensure_grad();
  void zero_grad();
  void clear_grad();

  Tensor detach() const;
  Tensor clone() const;
  /// Deep copy with a new shape of equal element count (no grad tracking).
  Tensor reshaped(Shape shape) const;

  /// Throws NumericError when any value is NaN or infinite.
  void check_finite(const char* what) const;

  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  struct Storage {
    Shape shape;
    FloatBuffer values;
    FloatBuffer grad;
  };
  std::shared_ptr<Storage> storage_;
  bool requires_grad_ = false;

  friend class Graph;
};

/// Reverse-mode tape. Ops append a backward closure when any input requires
/// grad; `backward` replays the closures in exact reverse order.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn);
  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws StateError when called
  /// a second time before `reset()`.
  void backward(Tensor& loss);
  void reset();

  std::size_t size() const { return tape_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<BackwardFn> tape_;
  bool consumed_ = false;
};

}  // namespace cqd
