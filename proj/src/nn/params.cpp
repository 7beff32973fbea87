#include "glip/nn/params.hpp"

#include <stdexcept>

namespace glip::nn {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::zeros(const std::string& name, Shape shape) { return constant(name, std::move(shape), 0.0); }

Tensor ParamStore::constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value));
}

Tensor ParamStore::normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor ParamStore::uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return add(name, Tensor::from(std::move(shape), std::move(v)));
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_)
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) {
    auto copy = t;
    copy.zero_grad();
  }
}

}  // namespace glip::nn
