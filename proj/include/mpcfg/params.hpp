#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpcfg/tensor.hpp"

namespace mpcfg {

// Named parameter collection with stable (insertion) order, so that
// optimizer state, checkpoints and gradient checks all see the same
// sequence.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t) {
    if (map_.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    order_.push_back(name);
    return map_.emplace(name, std::move(t)).first->second;
  }

  bool has(const std::string& name) const { return map_.count(name) > 0; }

  Tensor& get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::mt19937_64& rng, int rows, int cols);
// Vector parameters (biases start at zero elsewhere; this is for
// embedding-like vectors): U(-a, a) with a = sqrt(3 / n), i.e. unit
// variance-ish scaling.
Tensor uniform_vector(std::mt19937_64& rng, int n);

}  // namespace mpcfg
