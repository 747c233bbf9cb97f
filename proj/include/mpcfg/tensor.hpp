#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpcfg {

// Row-major storage throughout; flat value order is row-major everywhere
// (serialization relies on this).
using Array2d = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense real tensor of rank 0, 1 or 2.
//
// Rank 0 is a scalar (shape {}), rank 1 a vector (shape {n}), rank 2 a
// matrix (shape {r, c}). Values are backed by a row-major Eigen array; a
// vector is stored as a single row.
class Tensor {
 public:
  Tensor() : shape_{}, values_(Array2d::Zero(1, 1)) {}

  static Tensor scalar(double v) {
    Tensor t;
    t.values_(0, 0) = v;
    return t;
  }

  static Tensor vector(const Eigen::ArrayXd& v) {
    Tensor t;
    t.shape_ = {static_cast<int>(v.size())};
    t.values_.resize(1, v.size());
    t.values_.row(0) = v.transpose();
    return t;
  }

  static Tensor vector(std::initializer_list<double> v) {
    Eigen::ArrayXd a(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) a(i++) = x;
    return vector(a);
  }

  static Tensor matrix(const Array2d& m) {
    Tensor t;
    t.shape_ = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    t.values_ = m;
    return t;
  }

  static Tensor zeros(const std::vector<int>& shape) {
    Tensor t;
    t.reset(shape);
    return t;
  }

  static Tensor from_flat(const std::vector<int>& shape, const std::vector<double>& vals) {
    Tensor t;
    t.reset(shape);
    if (static_cast<long>(vals.size()) != t.numel())
      throw ShapeError("from_flat: value count does not match shape");
    double* p = t.values_.data();
    for (size_t i = 0; i < vals.size(); ++i) p[i] = vals[i];
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  long numel() const {
    long n = 1;
    for (int d : shape_) n *= d;
    return n;
  }

  // Storage extents (rank 0 and 1 occupy a single row).
  long rows() const { return values_.rows(); }
  long cols() const { return values_.cols(); }

  const Array2d& array() const { return values_; }
  Array2d& array() { return values_; }

  double item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
    return values_(0, 0);
  }

  double& at(long i) { return values_.data()[i]; }
  double at(long i) const { return values_.data()[i]; }
  double& at(long i, long j) { return values_(i, j); }
  double at(long i, long j) const { return values_(i, j); }

  const double* data() const { return values_.data(); }
  double* data() { return values_.data(); }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool b) {
    requires_grad_ = b;
    return *this;
  }

  bool all_finite() const { return values_.isFinite().all(); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

 private:
  void reset(const std::vector<int>& shape) {
    if (shape.size() > 2) throw ShapeError("tensor rank > 2 not supported");
    for (int d : shape)
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    shape_ = shape;
    if (shape.empty())
      values_ = Array2d::Zero(1, 1);
    else if (shape.size() == 1)
      values_ = Array2d::Zero(1, shape[0]);
    else
      values_ = Array2d::Zero(shape[0], shape[1]);
  }

  std::vector<int> shape_;
  Array2d values_;
  bool requires_grad_ = false;
};

}  // namespace mpcfg
