#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace i2v {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until a gradient first reaches this tensor.
  std::vector<double> grad;
  bool requires_grad = false;

  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with optional gradient.
///
/// Copies share storage (handle semantics); use clone() for an independent
/// copy. Operations never mutate their inputs, so a Tensor produced by an op
/// can be treated as an immutable value. Only the optimizer writes into
/// parameter storage, through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();
  void drop_grad();

  // Independent storage, no gradient, requires_grad cleared.
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations whose inputs require gradients append a node while a tape is
/// active on the current thread (see TapeScope). backward() walks the nodes
/// in reverse recording order, so every node is visited exactly once and
/// accumulation order is fixed.
class Tape {
 public:
  using BackwardFn = std::function<void(const detail::TensorImpl& out)>;

  void record(std::string_view op, std::shared_ptr<detail::TensorImpl> output, BackwardFn fn);
  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Tape active on this thread, or nullptr.
  static Tape* active();

 private:
  friend class TapeScope;
  struct Node {
    std::string_view op;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// ---- primitive operations -------------------------------------------------

// [m,k]x[k,n]; [..,m,k]x[k,n] (shared right operand); [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& x);
// x: [c_in,h,w] or [n,c_in,h,w]; kernel: [c_out,c_in,k,k]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding);

// Pointwise with b broadcast against a (right-aligned, extents equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor silu(const Tensor& x);

// x: [n,c,...]; gamma/beta: [c] or undefined for no affine part.
Tensor group_norm(const Tensor& x, std::size_t groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose_last2(const Tensor& x);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor sum_all(const Tensor& x);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace i2v
