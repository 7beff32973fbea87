#pragma once

#include <map>
#include <string>
#include <vector>

#include "glip/core/rng.hpp"
#include "glip/core/tensor.hpp"

namespace glip::nn {

/// Named registry of trainable tensors. Names are dotted paths
/// ("frontend.stem.w"); iteration is in name order, which fixes the
/// checkpoint layout and the optimizer's update order.
class ParamStore {
 public:
  Tensor zeros(const std::string& name, Shape shape);
  Tensor constant(const std::string& name, Shape shape, double value);
  Tensor normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  Tensor uniform(const std::string& name, Shape shape, double bound, Rng& rng);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor get(const std::string& name) const;
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  Tensor add(const std::string& name, Tensor t);
  std::map<std::string, Tensor> params_;
};

}  // namespace glip::nn
