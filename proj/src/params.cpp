#include "mpcfg/params.hpp"

#include <cmath>

namespace mpcfg {

Tensor xavier_uniform(std::mt19937_64& rng, int rows, int cols) {
  double a = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t = Tensor::zeros({rows, cols});
  for (long i = 0; i < t.numel(); ++i) t.at(i) = dist(rng);
  return t;
}

Tensor uniform_vector(std::mt19937_64& rng, int n) {
  double a = std::sqrt(3.0 / n);
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t = Tensor::zeros({n});
  for (long i = 0; i < t.numel(); ++i) t.at(i) = dist(rng);
  return t;
}

}  // namespace mpcfg
