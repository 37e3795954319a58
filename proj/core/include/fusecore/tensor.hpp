#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace fusecore {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Allocates on 64-byte boundaries. Vectorised kernels split a buffer into a
// scalar head and a SIMD body at the first aligned address, so a fixed
// alignment keeps every floating-point sum in the same order from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  // Empty until a backward pass (or an explicit accessor) needs it.
  Buffer grad;
  bool requires_grad = false;
  // Produced by a recorded operation rather than created by the user.
  bool interior = false;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

}  // namespace detail

// Dense row-major tensor of 64-bit reals.
//
// Copies share storage (handle semantics); every operation in ops.hpp returns
// a fresh tensor, so no two tensors alias writable data. Only parameters are
// mutated in place, and only through mutable_data() by the optimizer or a
// checkpoint loader.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  // Takes ownership of an aligned buffer without copying.
  static Tensor adopt(Shape shape, Buffer data);
  static Tensor scalar(double value);
  // Leaf that collects gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  // Leading extent for matrices; vectors count as one row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  // Drop the gradient buffer entirely.
  void clear_grad();

  // Same values, no gradient tracking, independent storage.
  Tensor detach() const;
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const detail::ImplPtr& impl() const { return impl_; }

 private:
  explicit Tensor(detail::ImplPtr impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(detail::ImplPtr impl);

  detail::ImplPtr impl_;
};

Tensor make_tensor(detail::ImplPtr impl);

// Record of executed operations for one forward pass.
//
// Nodes are appended in execution order, which is already a topological
// order, so backward walks the list once in reverse. A tape is confined to
// the thread that activated it.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  struct Node {
    detail::ImplPtr output;
    std::vector<detail::ImplPtr> inputs;
    BackwardFn backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Makes this tape the recording target for the current thread.
  [[nodiscard]] Scope activate() { return Scope(*this); }
  static Tape* current();

  void record(Node node);
  // Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
  // Leaf gradients accumulate across calls; interior ones are recomputed.
  void backward(const Tensor& root);
  void clear();
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* previous_;
};

}  // namespace fusecore
