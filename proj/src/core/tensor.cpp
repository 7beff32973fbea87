#include "glip/core/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace glip {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

double* TensorImpl::grad_ptr() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad.data();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_mode_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw GraphError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size())
    throw ShapeError("axis " + std::to_string(i) + " out of range for shape " + shape_str(s));
  return s[i];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("index rank " + std::to_string(idx.size()) + " vs shape " + shape_str(s));
  std::size_t flat = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    if (i >= s[k]) throw ShapeError("index out of range for shape " + shape_str(s));
    flat = flat * s[k] + i;
    ++k;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_->grad_fn; }

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient populated");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return {impl_->grad_ptr(), impl_->data.size()}; }

void Tensor::zero_grad() { impl_->grad.clear(); }

void Tensor::backward() const {
  if (numel() != 1) throw GraphError("backward() needs a scalar, got shape " + shape_str(shape()));
  if (!impl_->requires_grad) return;  // nothing tracked, nothing to populate
  if (impl_->grad_fn && impl_->grad_fn->consumed)
    throw GraphError("backward() called twice on the same graph");

  // Post-order DFS gives a topological order (inputs before consumers).
  // Shared ownership keeps intermediates alive while consumed nodes release them.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    TensorImpl* t = top.first.get();
    if (t->grad_fn && top.second < t->grad_fn->inputs.size()) {
      auto in = t->grad_fn->inputs[top.second++];
      if (in->requires_grad && seen.insert(in.get()).second) stack.emplace_back(std::move(in), 0);
      continue;
    }
    order.push_back(std::move(top.first));
    stack.pop_back();
  }

  impl_->grad_ptr()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = it->get();
    if (!t->grad_fn) continue;
    auto& node = *t->grad_fn;
    if (node.consumed) throw GraphError("backward() reached an already consumed node");
    t->grad_ptr();
    node.backward(*t);
    node.backward = nullptr;
    node.inputs.clear();
    node.consumed = true;
  }
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return detach(); }

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op,
                           std::initializer_list<Tensor> inputs,
                           std::function<void(const TensorImpl& out)> backward) {
  return make_result(std::move(shape), std::move(data), op, std::vector<Tensor>(inputs),
                     std::move(backward));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, const char* op,
                           const std::vector<Tensor>& inputs,
                           std::function<void(const TensorImpl& out)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
                       return t.requires_grad();
                     });
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = op;
    for (const auto& in : inputs) node->inputs.push_back(in.impl_);
    node->backward = std::move(backward);
    impl->grad_fn = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

}  // namespace glip
