#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hetcan/common.hpp"
#include "hetcan/tape.hpp"
#include "hetcan/tensor.hpp"

namespace hetcan {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Index worst_param = -1;    // index into the flattened parameter list
  Index worst_coord = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares tape gradients of a scalar-valued function against central
// differences. `forward` must rebuild the graph on the given tape from the
// current parameter values each call.
//
// The function is evaluated twice up front; a bit-level mismatch means the
// forward pass is not deterministic, which would poison the finite-difference
// probes, so that is reported as a numeric error rather than a gradient gap.
// `max_coords_per_param` > 0 probes an evenly strided subset of each
// parameter's entries instead of all of them (the stride is blind to the
// gradient values, so systematically missing gradients still surface).
inline GradCheckResult grad_check(const std::function<Tensor(GradientTape&)>& forward,
                                  const std::vector<Tensor>& params, double step = 1e-5,
                                  Index max_coords_per_param = 0) {
  {
    GradientTape t1(false), t2(false);
    const double v1 = forward(t1).at(0, 0);
    const double v2 = forward(t2).at(0, 0);
    if (v1 != v2)
      throw NumericError("grad_check: forward pass is not deterministic (" +
                         std::to_string(v1) + " vs " + std::to_string(v2) + ")");
  }

  GradientTape tape(true);
  Tensor loss = forward(tape);
  if (loss.rows() != 1 || loss.cols() != 1)
    throw DimensionError("grad_check: loss must be scalar, got " + loss.shape());
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p.requires_grad())
      throw ConfigError("grad_check: parameter does not require grad");
    Tensor h = p;  // shared storage; allocates a zero grad if the graph never touched it
    h.ensure_grad();
    analytic.push_back(h.grad_values());
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    Index stride = 1;
    if (max_coords_per_param > 0 && p.size() > max_coords_per_param)
      stride = (p.size() + max_coords_per_param - 1) / max_coords_per_param;
    for (Index c = 0; c < p.size(); c += stride) {
      const double saved = p.data()[c];
      p.data()[c] = saved + step;
      GradientTape tp(false);
      const double up = forward(tp).at(0, 0);
      p.data()[c] = saved - step;
      GradientTape tm(false);
      const double down = forward(tm).at(0, 0);
      p.data()[c] = saved;

      const double num = (up - down) / (2.0 * step);
      const double ana = analytic[pi][static_cast<std::size_t>(c)];
      const double abs_err = std::fabs(num - ana);
      const double rel = abs_err / std::max({std::fabs(num), std::fabs(ana), 1e-8});
      ++res.coords_checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.max_abs_error = abs_err;
        res.worst_param = static_cast<Index>(pi);
        res.worst_coord = c;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace hetcan
