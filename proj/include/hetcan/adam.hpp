#pragma once
// Adam with bias correction; weight decay enters through the gradient
// (classic L2 coupling, not the decoupled variant).

#include <cmath>
#include <vector>

#include "hetcan/tensor.hpp"

namespace hetcan {

struct AdamOptions {
  double lr = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m, v;
  Index step = 0;

  void match(const std::vector<Tensor>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Tensor::zeros(p.rows(), p.cols()));
      v.push_back(Tensor::zeros(p.rows(), p.cols()));
    }
    step = 0;
  }
};

inline void adam_step(const std::vector<Tensor>& params, AdamState& st, const AdamOptions& opt) {
  if (st.m.size() != params.size())
    throw ConfigError("adam: moment buffers sized for " + std::to_string(st.m.size()) +
                      " parameters, got " + std::to_string(params.size()));
  ++st.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    p.ensure_grad();
    const double* g = p.grad();
    double* theta = p.data();
    double* m = st.m[i].data();
    double* v = st.v[i].data();
    for (Index c = 0; c < p.size(); ++c) {
      const double grad = g[c] + opt.weight_decay * theta[c];
      m[c] = opt.beta1 * m[c] + (1.0 - opt.beta1) * grad;
      v[c] = opt.beta2 * v[c] + (1.0 - opt.beta2) * grad * grad;
      theta[c] -= opt.lr * (m[c] / c1) / (std::sqrt(v[c] / c2) + opt.eps);
    }
  }
}

}  // namespace hetcan
