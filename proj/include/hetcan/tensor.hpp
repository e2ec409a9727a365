#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "hetcan/common.hpp"
#include "hetcan/rng.hpp"

namespace hetcan {

// Dense row-major fp64 matrix. Copies are shallow handles onto shared
// storage, so a Tensor can sit both in a parameter list and on a tape
// while referring to the same values and gradient buffer.
class Tensor {
 public:
  Tensor() : s_(std::make_shared<Storage>()) {}

  Tensor(Index rows, Index cols, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    if (rows < 0 || cols < 0) throw DimensionError("negative tensor shape");
    s_->rows = rows;
    s_->cols = cols;
    s_->requires_grad = requires_grad;
    s_->value.assign(static_cast<std::size_t>(rows * cols), 0.0);
  }

  static Tensor zeros(Index rows, Index cols) { return Tensor(rows, cols); }

  static Tensor full(Index rows, Index cols, double v) {
    Tensor t(rows, cols);
    for (auto& x : t.values()) x = v;
    return t;
  }

  static Tensor ones(Index rows, Index cols) { return full(rows, cols, 1.0); }

  static Tensor identity(Index n) {
    Tensor t(n, n);
    for (Index i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
    Tensor t(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c)
        throw DimensionError("from_rows: ragged initializer");
      Index j = 0;
      for (double v : row) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }

  static Tensor from_vector(Index rows, Index cols, std::vector<double> data) {
    if (static_cast<Index>(data.size()) != rows * cols)
      throw DimensionError("from_vector: data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(rows, cols));
    Tensor t;
    t.s_->rows = rows;
    t.s_->cols = cols;
    t.s_->value = std::move(data);
    return t;
  }

  // Glorot-uniform initialization, s = sqrt(6 / (fan_in + fan_out)).
  static Tensor glorot(Index rows, Index cols, Rng& rng, bool requires_grad = true) {
    Tensor t(rows, cols, requires_grad);
    const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (auto& x : t.values()) x = rng.uniform(-s, s);
    return t;
  }

  // All-ones plus small Gaussian noise; used for type embedding tables so
  // training starts next to the identity modulation.
  static Tensor ones_with_noise(Index rows, Index cols, Rng& rng, double noise_scale,
                                bool requires_grad = true) {
    Tensor t(rows, cols, requires_grad);
    for (auto& x : t.values()) x = 1.0 + noise_scale * rng.normal();
    return t;
  }

  Index rows() const { return s_->rows; }
  Index cols() const { return s_->cols; }
  Index size() const { return s_->rows * s_->cols; }
  bool empty() const { return size() == 0; }

  // The handle is shallow-const, like shared_ptr: a const Tensor still
  // exposes mutable storage, since copies alias the same buffers anyway.
  double* data() const { return s_->value.data(); }
  std::vector<double>& values() const { return s_->value; }

  double& at(Index i, Index j) const {
    return s_->value[static_cast<std::size_t>(i * s_->cols + j)];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) const { s_->requires_grad = rg; }

  bool grad_allocated() const { return !s_->grad.empty(); }

  void ensure_grad() const {
    if (s_->grad.size() != s_->value.size()) s_->grad.assign(s_->value.size(), 0.0);
  }

  void zero_grad() const {
    if (!s_->grad.empty()) std::memset(s_->grad.data(), 0, s_->grad.size() * sizeof(double));
  }

  double* grad() const {
    ensure_grad();
    return s_->grad.data();
  }

  const std::vector<double>& grad_values() const { return s_->grad; }

  double grad_at(Index i, Index j) const {
    if (s_->grad.empty()) return 0.0;
    return s_->grad[static_cast<std::size_t>(i * s_->cols + j)];
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  const void* storage_key() const { return s_.get(); }

  Tensor clone() const {
    Tensor t;
    *t.s_ = *s_;
    return t;
  }

  std::string shape() const { return shape_string(s_->rows, s_->cols); }

  static std::string shape_string(Index r, Index c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  bool all_finite() const {
    for (double v : s_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  struct Storage {
    Index rows = 0;
    Index cols = 0;
    bool requires_grad = false;
    std::vector<double> value;
    std::vector<double> grad;
  };

  std::shared_ptr<Storage> s_;
};

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::fabs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError("max_abs_diff: " + a.shape() + " vs " + b.shape());
  double m = 0.0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace hetcan
