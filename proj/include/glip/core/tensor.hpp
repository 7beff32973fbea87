#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace glip {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes do not conform; the message names every dimension involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for log/divide on operands outside the function's domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the autodiff machinery (non-scalar backward, double backward).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid setting (weights outside [0,1], beam width 0, unknown config key).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl;

// One recorded operation. The backward rule reads the output gradient and
// accumulates into the inputs; it is released once run.
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  double* grad_ptr();  // allocates zeros on first use
};

/// Scope guard disabling graph recording on this thread (inference, decoding).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_mode_enabled();

/// Dense row-major double tensor with optional reverse-mode gradient tracking.
///
/// Copies share storage (handle semantics), which is what lets parameter
/// tensors be held by several modules and updated in place by the optimizer.
/// Values are never mutated after an op consumes them, except through
/// `mutable_data()` on leaves.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse pass from this scalar. Every tracked tensor reachable through
  /// the recorded graph receives its accumulated gradient. The graph is
  /// consumed; calling again on the same result is an error.
  void backward() const;

  /// Same values, no history, no gradient tracking.
  Tensor detach() const;
  /// Deep copy of the values (no history).
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  /// Builds an op result, recording a node when grad mode is on and any
  /// input is tracked.
  static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                            std::initializer_list<Tensor> inputs,
                            std::function<void(const TensorImpl& out)> backward);
  static Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                            const std::vector<Tensor>& inputs,
                            std::function<void(const TensorImpl& out)> backward);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Gradient buffer of a tracked tensor, or nullptr when it is untracked.
inline double* grad_sink(const std::shared_ptr<TensorImpl>& t) {
  return t && t->requires_grad ? t->grad_ptr() : nullptr;
}

}  // namespace glip
