#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hetcan/common.hpp"
#include "hetcan/rng.hpp"
#include "hetcan/tensor.hpp"

namespace hetcan {

// Reverse-mode gradient tape. Every operation computes its value eagerly,
// validates the result is finite, and (while recording) pushes a closure
// that scatters adjoints back into its inputs. backward() replays the
// closures once, in reverse execution order.
//
// A tape and the tensors flowing through it belong to one thread for the
// duration of a forward/backward pass.
class GradientTape {
 public:
  explicit GradientTape(bool recording = true) : recording_(recording) {}

  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_steps() const { return steps_.size(); }

  // ---------------------------------------------------------------- matmul
  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
      throw DimensionError("matmul: inner dimensions differ, " + a.shape() + " * " + b.shape());
    const Index m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n);
    matmul_accumulate(a.data(), b.data(), out.data(), m, k, n);
    finish(out, "matmul", {a, b}, [a, b, out]() mutable {
      const Index m = a.rows(), k = a.cols(), n = b.cols();
      const double* g = out.grad();
      if (a.requires_grad()) {
        // dA += g * B^T
        double* da = a.grad();
        for (Index i = 0; i < m; ++i)
          for (Index p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g + i * n;
            const double* brow = b.data() + p * n;
            for (Index j = 0; j < n; ++j) acc += grow[j] * brow[j];
            da[i * k + p] += acc;
          }
      }
      if (b.requires_grad()) {
        // dB += A^T * g
        double* db = b.grad();
        for (Index i = 0; i < m; ++i) {
          const double* arow = a.data() + i * k;
          const double* grow = g + i * n;
          for (Index p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* drow = db + p * n;
            for (Index j = 0; j < n; ++j) drow[j] += av * grow[j];
          }
        }
      }
    });
    return out;
  }

  // ------------------------------------------------------------ elementwise
  Tensor add(const Tensor& a, const Tensor& b) { return lincomb(1.0, a, 1.0, b); }

  Tensor lincomb(double ca, const Tensor& a, double cb, const Tensor& b) {
    require_same_shape("lincomb", a, b);
    Tensor out(a.rows(), a.cols());
    for (Index i = 0; i < a.size(); ++i) out.data()[i] = ca * a.data()[i] + cb * b.data()[i];
    finish(out, "lincomb", {a, b}, [ca, a, cb, b, out]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
        for (Index i = 0; i < a.size(); ++i) da[i] += ca * g[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        for (Index i = 0; i < b.size(); ++i) db[i] += cb * g[i];
      }
    });
    return out;
  }

  Tensor scale(const Tensor& a, double s) {
    Tensor out(a.rows(), a.cols());
    for (Index i = 0; i < a.size(); ++i) out.data()[i] = s * a.data()[i];
    finish(out, "scale", {a}, [a, s, out]() mutable {
      const double* g = out.grad();
      double* da = a.grad();
      for (Index i = 0; i < a.size(); ++i) da[i] += s * g[i];
    });
    return out;
  }

  Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape("hadamard", a, b);
    Tensor out(a.rows(), a.cols());
    for (Index i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    finish(out, "hadamard", {a, b}, [a, b, out]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* da = a.grad();
        for (Index i = 0; i < a.size(); ++i) da[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad();
        for (Index i = 0; i < b.size(); ++i) db[i] += g[i] * a.data()[i];
      }
    });
    return out;
  }

  // x[n x d] + broadcast bias[1 x d]
  Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols())
      throw DimensionError("add_row_bias: " + x.shape() + " + " + bias.shape());
    Tensor out(x.rows(), x.cols());
    const Index n = x.rows(), d = x.cols();
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) + bias.at(0, j);
    finish(out, "add_row_bias", {x, bias}, [x, bias, out]() mutable {
      const Index n = x.rows(), d = x.cols();
      const double* g = out.grad();
      if (x.requires_grad()) {
        double* dx = x.grad();
        for (Index i = 0; i < n * d; ++i) dx[i] += g[i];
      }
      if (bias.requires_grad()) {
        double* db = bias.grad();
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < d; ++j) db[j] += g[i * d + j];
      }
    });
    return out;
  }

  // ------------------------------------------------------------ activations
  Tensor leaky_relu(const Tensor& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0))
      throw ConfigError("leaky_relu: slope must lie in (0,1), got " + std::to_string(slope));
    Tensor out(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      out.data()[i] = v >= 0.0 ? v : slope * v;
    }
    finish(out, "leaky_relu", {x}, [x, slope, out]() mutable {
      const double* g = out.grad();
      double* dx = x.grad();
      for (Index i = 0; i < x.size(); ++i) dx[i] += g[i] * (x.data()[i] >= 0.0 ? 1.0 : slope);
    });
    return out;
  }

  Tensor relu(const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    for (Index i = 0; i < x.size(); ++i) out.data()[i] = std::max(0.0, x.data()[i]);
    finish(out, "relu", {x}, [x, out]() mutable {
      const double* g = out.grad();
      double* dx = x.grad();
      for (Index i = 0; i < x.size(); ++i) dx[i] += x.data()[i] > 0.0 ? g[i] : 0.0;
    });
    return out;
  }

  // --------------------------------------------------------- normalization
  // Per row: zero mean, unit variance (population variance / sqrt(var+eps)),
  // then scale by gain and shift by bias.
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
        bias.cols() != x.cols())
      throw DimensionError("layer_norm: x " + x.shape() + ", gain " + gain.shape() + ", bias " +
                           bias.shape());
    const Index n = x.rows(), m = x.cols();
    Tensor out(n, m);
    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * m));
    auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const double* row = x.data() + i * m;
      double mu = 0.0;
      for (Index j = 0; j < m; ++j) mu += row[j];
      mu /= static_cast<double>(m);
      double var = 0.0;
      for (Index j = 0; j < m; ++j) {
        const double c = row[j] - mu;
        var += c * c;
      }
      var /= static_cast<double>(m);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<std::size_t>(i)] = inv;
      for (Index j = 0; j < m; ++j) {
        const double xh = (row[j] - mu) * inv;
        (*xhat)[static_cast<std::size_t>(i * m + j)] = xh;
        out.at(i, j) = xh * gain.at(0, j) + bias.at(0, j);
      }
    }
    finish(out, "layer_norm", {x, gain, bias}, [x, gain, bias, out, xhat, inv_sigma]() mutable {
      const Index n = x.rows(), m = x.cols();
      const double* g = out.grad();
      const double invm = 1.0 / static_cast<double>(m);
      for (Index i = 0; i < n; ++i) {
        const double* grow = g + i * m;
        const double* xh = xhat->data() + i * m;
        if (gain.requires_grad()) {
          double* dg = gain.grad();
          for (Index j = 0; j < m; ++j) dg[j] += grow[j] * xh[j];
        }
        if (bias.requires_grad()) {
          double* db = bias.grad();
          for (Index j = 0; j < m; ++j) db[j] += grow[j];
        }
        if (x.requires_grad()) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (Index j = 0; j < m; ++j) {
            const double dxh = grow[j] * gain.at(0, j);
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
          }
          const double inv = (*inv_sigma)[static_cast<std::size_t>(i)];
          double* dx = x.grad() + i * m;
          for (Index j = 0; j < m; ++j) {
            const double dxh = grow[j] * gain.at(0, j);
            dx[j] += inv * (dxh - invm * sum_dxhat - xh[j] * invm * sum_dxhat_xhat);
          }
        }
      }
    });
    return out;
  }

  // Each row divided by max(||row||_2, eps); zero rows stay zero.
  Tensor l2_normalize_rows(const Tensor& x, double eps) {
    const Index n = x.rows(), m = x.cols();
    Tensor out(n, m);
    auto scale_inv = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
    auto clamped = std::make_shared<std::vector<char>>(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const double* row = x.data() + i * m;
      double nrm = 0.0;
      for (Index j = 0; j < m; ++j) nrm += row[j] * row[j];
      nrm = std::sqrt(nrm);
      const bool clamp = nrm <= eps;
      const double s = clamp ? eps : nrm;
      (*scale_inv)[static_cast<std::size_t>(i)] = 1.0 / s;
      (*clamped)[static_cast<std::size_t>(i)] = clamp ? 1 : 0;
      for (Index j = 0; j < m; ++j) out.at(i, j) = row[j] / s;
    }
    finish(out, "l2_normalize_rows", {x}, [x, out, scale_inv, clamped]() mutable {
      const Index n = x.rows(), m = x.cols();
      const double* g = out.grad();
      double* dx = x.grad();
      for (Index i = 0; i < n; ++i) {
        const double inv = (*scale_inv)[static_cast<std::size_t>(i)];
        const double* grow = g + i * m;
        const double* yrow = out.data() + i * m;
        if ((*clamped)[static_cast<std::size_t>(i)]) {
          for (Index j = 0; j < m; ++j) dx[i * m + j] += grow[j] * inv;
        } else {
          double dot = 0.0;
          for (Index j = 0; j < m; ++j) dot += grow[j] * yrow[j];
          for (Index j = 0; j < m; ++j) dx[i * m + j] += inv * (grow[j] - yrow[j] * dot);
        }
      }
    });
    return out;
  }

  // ---------------------------------------------------------------- softmax
  // Softmax over contiguous groups of the flattened tensor. offsets has one
  // more entry than there are groups; group g spans [offsets[g], offsets[g+1]).
  // Computed with max-subtraction.
  Tensor softmax_groups(const Tensor& x, const std::vector<Index>& offsets) {
    validate_offsets(offsets, x.size());
    Tensor out(x.rows(), x.cols());
    const double* in = x.data();
    double* o = out.data();
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
      const Index lo = offsets[g], hi = offsets[g + 1];
      double mx = in[lo];
      for (Index i = lo + 1; i < hi; ++i) mx = std::max(mx, in[i]);
      double denom = 0.0;
      for (Index i = lo; i < hi; ++i) {
        o[i] = std::exp(in[i] - mx);
        denom += o[i];
      }
      for (Index i = lo; i < hi; ++i) o[i] /= denom;
    }
    finish(out, "softmax_groups", {x}, [x, out, offsets]() mutable {
      const double* g = out.grad();
      const double* y = out.data();
      double* dx = x.grad();
      for (std::size_t k = 0; k + 1 < offsets.size(); ++k) {
        const Index lo = offsets[k], hi = offsets[k + 1];
        double dot = 0.0;
        for (Index i = lo; i < hi; ++i) dot += g[i] * y[i];
        for (Index i = lo; i < hi; ++i) dx[i] += y[i] * (g[i] - dot);
      }
    });
    return out;
  }

  // Row-wise softmax of a matrix: one group per row.
  Tensor row_softmax(const Tensor& x) {
    std::vector<Index> offsets(static_cast<std::size_t>(x.rows()) + 1);
    for (Index i = 0; i <= x.rows(); ++i) offsets[static_cast<std::size_t>(i)] = i * x.cols();
    return softmax_groups(x, offsets);
  }

  // ---------------------------------------------------------------- dropout
  // Inverted dropout; identity when not training or rate == 0.
  Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
      throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const double keep = 1.0 - rate;
    const double inv_keep = 1.0 / keep;
    Tensor out(x.rows(), x.cols());
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
    for (Index i = 0; i < x.size(); ++i) {
      const double m = rng.uniform() < keep ? inv_keep : 0.0;
      (*mask)[static_cast<std::size_t>(i)] = m;
      out.data()[i] = x.data()[i] * m;
    }
    finish(out, "dropout", {x}, [x, out, mask]() mutable {
      const double* g = out.grad();
      double* dx = x.grad();
      for (Index i = 0; i < x.size(); ++i) dx[i] += g[i] * (*mask)[static_cast<std::size_t>(i)];
    });
    return out;
  }

  // ------------------------------------------------------------- reductions
  Tensor sum_all(const Tensor& x) {
    Tensor out(1, 1);
    double acc = 0.0;
    for (Index i = 0; i < x.size(); ++i) acc += x.data()[i];
    out.at(0, 0) = acc;
    finish(out, "sum_all", {x}, [x, out]() mutable {
      const double g = out.grad()[0];
      double* dx = x.grad();
      for (Index i = 0; i < x.size(); ++i) dx[i] += g;
    });
    return out;
  }

  // --------------------------------------------------------- gather/scatter
  Tensor gather_rows(const Tensor& table, std::vector<Index> ids) {
    const Index d = table.cols();
    Tensor out(static_cast<Index>(ids.size()), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Index r = ids[i];
      if (r < 0 || r >= table.rows())
        throw DimensionError("gather_rows: row " + std::to_string(r) + " out of " +
                             table.shape());
      std::memcpy(out.data() + static_cast<Index>(i) * d, table.data() + r * d,
                  static_cast<std::size_t>(d) * sizeof(double));
    }
    auto ids_sp = std::make_shared<std::vector<Index>>(std::move(ids));
    finish(out, "gather_rows", {table}, [table, out, ids_sp]() mutable {
      const Index d = table.cols();
      const double* g = out.grad();
      double* dt = table.grad();
      for (std::size_t i = 0; i < ids_sp->size(); ++i) {
        double* drow = dt + (*ids_sp)[i] * d;
        const double* grow = g + static_cast<Index>(i) * d;
        for (Index j = 0; j < d; ++j) drow[j] += grow[j];
      }
    });
    return out;
  }

  // Places row i of x at row ids[i] of an out_rows x cols zero matrix.
  Tensor scatter_rows(const Tensor& x, std::vector<Index> ids, Index out_rows) {
    if (static_cast<Index>(ids.size()) != x.rows())
      throw DimensionError("scatter_rows: " + std::to_string(ids.size()) + " ids for " +
                           x.shape());
    const Index d = x.cols();
    Tensor out(out_rows, d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const Index r = ids[i];
      if (r < 0 || r >= out_rows)
        throw DimensionError("scatter_rows: target row " + std::to_string(r) + " out of " +
                             std::to_string(out_rows));
      std::memcpy(out.data() + r * d, x.data() + static_cast<Index>(i) * d,
                  static_cast<std::size_t>(d) * sizeof(double));
    }
    auto ids_sp = std::make_shared<std::vector<Index>>(std::move(ids));
    finish(out, "scatter_rows", {x}, [x, out, ids_sp]() mutable {
      const Index d = x.cols();
      const double* g = out.grad();
      double* dx = x.grad();
      for (std::size_t i = 0; i < ids_sp->size(); ++i) {
        const double* grow = g + (*ids_sp)[i] * d;
        double* drow = dx + static_cast<Index>(i) * d;
        for (Index j = 0; j < d; ++j) drow[j] += grow[j];
      }
    });
    return out;
  }

  // out[dst[e]] += weights[e] * values[src[e]], edges visited in order.
  // This is the per-edge weighted neighborhood sum; the fixed edge order
  // keeps reductions deterministic.
  Tensor edge_aggregate(const Tensor& values, const Tensor& weights,
                        const std::vector<Index>& src, const std::vector<Index>& dst,
                        Index out_rows) {
    const auto num_edges = static_cast<Index>(src.size());
    if (static_cast<Index>(dst.size()) != num_edges)
      throw DimensionError("edge_aggregate: src/dst length mismatch");
    if (weights.size() != num_edges)
      throw DimensionError("edge_aggregate: " + std::to_string(num_edges) + " edges but " +
                           std::to_string(weights.size()) + " weights");
    const Index d = values.cols();
    Tensor out(out_rows, d);
    for (Index e = 0; e < num_edges; ++e) {
      const double w = weights.data()[e];
      const double* vrow = values.data() + src[static_cast<std::size_t>(e)] * d;
      double* orow = out.data() + dst[static_cast<std::size_t>(e)] * d;
      for (Index j = 0; j < d; ++j) orow[j] += w * vrow[j];
    }
    auto src_sp = std::make_shared<std::vector<Index>>(src);
    auto dst_sp = std::make_shared<std::vector<Index>>(dst);
    finish(out, "edge_aggregate", {values, weights},
           [values, weights, out, src_sp, dst_sp]() mutable {
             const Index d = values.cols();
             const double* g = out.grad();
             const auto num_edges = static_cast<Index>(src_sp->size());
             for (Index e = 0; e < num_edges; ++e) {
               const Index s = (*src_sp)[static_cast<std::size_t>(e)];
               const Index t = (*dst_sp)[static_cast<std::size_t>(e)];
               const double* grow = g + t * d;
               if (values.requires_grad()) {
                 const double w = weights.data()[e];
                 double* dv = values.grad() + s * d;
                 for (Index j = 0; j < d; ++j) dv[j] += w * grow[j];
               }
               if (weights.requires_grad()) {
                 const double* vrow = values.data() + s * d;
                 double acc = 0.0;
                 for (Index j = 0; j < d; ++j) acc += vrow[j] * grow[j];
                 weights.grad()[e] += acc;
               }
             }
           });
    return out;
  }

  // --------------------------------------------------------------- reshape
  Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
      throw DimensionError("concat_cols: " + a.shape() + " || " + b.shape());
    const Index n = a.rows(), da = a.cols(), db = b.cols();
    Tensor out(n, da + db);
    for (Index i = 0; i < n; ++i) {
      std::memcpy(out.data() + i * (da + db), a.data() + i * da,
                  static_cast<std::size_t>(da) * sizeof(double));
      std::memcpy(out.data() + i * (da + db) + da, b.data() + i * db,
                  static_cast<std::size_t>(db) * sizeof(double));
    }
    finish(out, "concat_cols", {a, b}, [a, b, out]() mutable {
      const Index n = a.rows(), da = a.cols(), db = b.cols();
      const double* g = out.grad();
      for (Index i = 0; i < n; ++i) {
        if (a.requires_grad()) {
          double* dst = a.grad() + i * da;
          const double* srcp = g + i * (da + db);
          for (Index j = 0; j < da; ++j) dst[j] += srcp[j];
        }
        if (b.requires_grad()) {
          double* dst = b.grad() + i * db;
          const double* srcp = g + i * (da + db) + da;
          for (Index j = 0; j < db; ++j) dst[j] += srcp[j];
        }
      }
    });
    return out;
  }

  // Same row-major payload, new shape. Bit-preserving in both directions.
  Tensor reshape_copy(const Tensor& x, Index rows, Index cols) {
    if (rows * cols != x.size())
      throw DimensionError("reshape_copy: " + x.shape() + " to " +
                           Tensor::shape_string(rows, cols));
    Tensor out(rows, cols);
    std::memcpy(out.data(), x.data(), static_cast<std::size_t>(x.size()) * sizeof(double));
    finish(out, "reshape_copy", {x}, [x, out]() mutable {
      const double* g = out.grad();
      double* dx = x.grad();
      for (Index i = 0; i < x.size(); ++i) dx[i] += g[i];
    });
    return out;
  }

  // --------------------------------------------------- block-diagonal matmul
  // Treats every run of `block` consecutive rows as an independent sequence.
  // scores: S_b = scale * Q_b K_b^T for each block b.
  Tensor block_scores(const Tensor& q, const Tensor& k, Index block, double scale) {
    require_same_shape("block_scores", q, k);
    if (block <= 0 || q.rows() % block != 0)
      throw DimensionError("block_scores: block " + std::to_string(block) +
                           " does not divide rows of " + q.shape());
    const Index nb = q.rows() / block, dk = q.cols();
    Tensor out(q.rows(), block);
    for (Index b = 0; b < nb; ++b) {
      const Index r0 = b * block;
      for (Index i = 0; i < block; ++i) {
        const double* qrow = q.data() + (r0 + i) * dk;
        double* orow = out.data() + (r0 + i) * block;
        for (Index j = 0; j < block; ++j) {
          const double* krow = k.data() + (r0 + j) * dk;
          double acc = 0.0;
          for (Index p = 0; p < dk; ++p) acc += qrow[p] * krow[p];
          orow[j] = scale * acc;
        }
      }
    }
    finish(out, "block_scores", {q, k}, [q, k, out, block, scale]() mutable {
      const Index nb = q.rows() / block, dk = q.cols();
      const double* g = out.grad();
      for (Index b = 0; b < nb; ++b) {
        const Index r0 = b * block;
        for (Index i = 0; i < block; ++i) {
          const double* grow = g + (r0 + i) * block;
          for (Index j = 0; j < block; ++j) {
            const double gij = scale * grow[j];
            if (gij == 0.0) continue;
            if (q.requires_grad()) {
              double* dq = q.grad() + (r0 + i) * dk;
              const double* krow = k.data() + (r0 + j) * dk;
              for (Index p = 0; p < dk; ++p) dq[p] += gij * krow[p];
            }
            if (k.requires_grad()) {
              double* dkr = k.grad() + (r0 + j) * dk;
              const double* qrow = q.data() + (r0 + i) * dk;
              for (Index p = 0; p < dk; ++p) dkr[p] += gij * qrow[p];
            }
          }
        }
      }
    });
    return out;
  }

  // apply: O_b = P_b V_b; P is [rows x block], V is [rows x dv].
  Tensor block_apply(const Tensor& p, const Tensor& v, Index block) {
    if (p.cols() != block || p.rows() != v.rows() || block <= 0 || p.rows() % block != 0)
      throw DimensionError("block_apply: p " + p.shape() + ", v " + v.shape() + ", block " +
                           std::to_string(block));
    const Index nb = p.rows() / block, dv = v.cols();
    Tensor out(p.rows(), dv);
    for (Index b = 0; b < nb; ++b) {
      const Index r0 = b * block;
      for (Index i = 0; i < block; ++i) {
        const double* prow = p.data() + (r0 + i) * block;
        double* orow = out.data() + (r0 + i) * dv;
        for (Index j = 0; j < block; ++j) {
          const double pij = prow[j];
          if (pij == 0.0) continue;
          const double* vrow = v.data() + (r0 + j) * dv;
          for (Index c = 0; c < dv; ++c) orow[c] += pij * vrow[c];
        }
      }
    }
    finish(out, "block_apply", {p, v}, [p, v, out, block]() mutable {
      const Index nb = p.rows() / block, dv = v.cols();
      const double* g = out.grad();
      for (Index b = 0; b < nb; ++b) {
        const Index r0 = b * block;
        for (Index i = 0; i < block; ++i) {
          const double* grow = g + (r0 + i) * dv;
          for (Index j = 0; j < block; ++j) {
            if (p.requires_grad()) {
              const double* vrow = v.data() + (r0 + j) * dv;
              double acc = 0.0;
              for (Index c = 0; c < dv; ++c) acc += grow[c] * vrow[c];
              p.grad()[(r0 + i) * block + j] += acc;
            }
            if (v.requires_grad()) {
              const double pij = p.data()[(r0 + i) * block + j];
              if (pij == 0.0) continue;
              double* dvr = v.grad() + (r0 + j) * dv;
              for (Index c = 0; c < dv; ++c) dvr[c] += pij * grow[c];
            }
          }
        }
      }
    });
    return out;
  }

  // ------------------------------------------------------------- pair score
  // out[e] = dot(h[src[e]], h[dst[e]])
  Tensor pair_dot(const Tensor& h, const std::vector<Index>& src,
                  const std::vector<Index>& dst) {
    if (src.size() != dst.size()) throw DimensionError("pair_dot: src/dst length mismatch");
    const Index d = h.cols();
    Tensor out(static_cast<Index>(src.size()), 1);
    for (std::size_t e = 0; e < src.size(); ++e) {
      const double* a = h.data() + src[e] * d;
      const double* b = h.data() + dst[e] * d;
      double acc = 0.0;
      for (Index j = 0; j < d; ++j) acc += a[j] * b[j];
      out.data()[e] = acc;
    }
    auto src_sp = std::make_shared<std::vector<Index>>(src);
    auto dst_sp = std::make_shared<std::vector<Index>>(dst);
    finish(out, "pair_dot", {h}, [h, out, src_sp, dst_sp]() mutable {
      const Index d = h.cols();
      const double* g = out.grad();
      double* dh = h.grad();
      for (std::size_t e = 0; e < src_sp->size(); ++e) {
        const Index s = (*src_sp)[e], t = (*dst_sp)[e];
        const double ge = g[e];
        const double* hs = h.data() + s * d;
        const double* ht = h.data() + t * d;
        for (Index j = 0; j < d; ++j) {
          dh[s * d + j] += ge * ht[j];
          dh[t * d + j] += ge * hs[j];
        }
      }
    });
    return out;
  }

  // ----------------------------------------------------------------- losses
  // Mean negative log softmax probability of the true class over the listed
  // rows. labels[r] must be a valid class for every listed row.
  Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int32_t>& labels,
                               const std::vector<Index>& rows) {
    if (rows.empty()) throw DataError("softmax_cross_entropy: no rows selected");
    if (static_cast<Index>(labels.size()) != logits.rows())
      throw DimensionError("softmax_cross_entropy: labels/logits mismatch");
    const Index c = logits.cols();
    auto probs = std::make_shared<std::vector<double>>(rows.size() * static_cast<std::size_t>(c));
    double loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Index r = rows[i];
      const int32_t y = labels[static_cast<std::size_t>(r)];
      if (y < 0 || y >= c)
        throw DataError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
      const double* row = logits.data() + r * c;
      double mx = row[0];
      for (Index j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (Index j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
      const double log_denom = std::log(denom);
      for (Index j = 0; j < c; ++j)
        (*probs)[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)] =
            std::exp(row[j] - mx) / denom;
      loss -= row[y] - mx - log_denom;
    }
    const auto m = static_cast<double>(rows.size());
    Tensor out(1, 1);
    out.at(0, 0) = loss / m;
    auto rows_sp = std::make_shared<std::vector<Index>>(rows);
    auto labels_sp = std::make_shared<std::vector<int32_t>>(labels);
    finish(out, "softmax_cross_entropy", {logits},
           [logits, out, probs, rows_sp, labels_sp, m]() mutable {
             const Index c = logits.cols();
             const double g = out.grad()[0];
             double* dl = logits.grad();
             for (std::size_t i = 0; i < rows_sp->size(); ++i) {
               const Index r = (*rows_sp)[i];
               const int32_t y = (*labels_sp)[static_cast<std::size_t>(r)];
               for (Index j = 0; j < c; ++j) {
                 double p = (*probs)[i * static_cast<std::size_t>(c) + static_cast<std::size_t>(j)];
                 if (j == y) p -= 1.0;
                 dl[r * c + j] += g * p / m;
               }
             }
           });
    return out;
  }

  // Mean binary cross-entropy of elementwise sigmoids against a 0/1 target
  // matrix, over the listed rows. Stable log1p(exp(-|s|)) form.
  Tensor sigmoid_bce_rows(const Tensor& logits, const Tensor& targets,
                          const std::vector<Index>& rows) {
    require_same_shape("sigmoid_bce_rows", logits, targets);
    if (rows.empty()) throw DataError("sigmoid_bce_rows: no rows selected");
    const Index c = logits.cols();
    double loss = 0.0;
    for (const Index r : rows) {
      const double* s = logits.data() + r * c;
      const double* y = targets.data() + r * c;
      for (Index j = 0; j < c; ++j)
        loss += std::max(s[j], 0.0) - s[j] * y[j] + std::log1p(std::exp(-std::fabs(s[j])));
    }
    const double m = static_cast<double>(rows.size()) * static_cast<double>(c);
    Tensor out(1, 1);
    out.at(0, 0) = loss / m;
    auto rows_sp = std::make_shared<std::vector<Index>>(rows);
    finish(out, "sigmoid_bce_rows", {logits}, [logits, targets, out, rows_sp, m]() mutable {
      const Index c = logits.cols();
      const double g = out.grad()[0];
      double* dl = logits.grad();
      for (const Index r : *rows_sp) {
        const double* s = logits.data() + r * c;
        const double* y = targets.data() + r * c;
        for (Index j = 0; j < c; ++j) {
          const double sig = 1.0 / (1.0 + std::exp(-s[j]));
          dl[r * c + j] += g * (sig - y[j]) / m;
        }
      }
    });
    return out;
  }

  // Mean BCE of sigmoid(score) against targets in {0,1}. scores is [m x 1].
  Tensor bce_with_logits(const Tensor& scores, const std::vector<double>& targets) {
    if (scores.cols() != 1 || scores.rows() != static_cast<Index>(targets.size()))
      throw DimensionError("bce_with_logits: scores " + scores.shape() + " vs " +
                           std::to_string(targets.size()) + " targets");
    const Index m = scores.rows();
    double loss = 0.0;
    for (Index i = 0; i < m; ++i) {
      const double s = scores.data()[i];
      loss += std::max(s, 0.0) - s * targets[static_cast<std::size_t>(i)] +
              std::log1p(std::exp(-std::fabs(s)));
    }
    Tensor out(1, 1);
    out.at(0, 0) = loss / static_cast<double>(m);
    auto targets_sp = std::make_shared<std::vector<double>>(targets);
    finish(out, "bce_with_logits", {scores}, [scores, out, targets_sp]() mutable {
      const Index m = scores.rows();
      const double g = out.grad()[0];
      double* ds = scores.grad();
      for (Index i = 0; i < m; ++i) {
        const double sig = 1.0 / (1.0 + std::exp(-scores.data()[i]));
        ds[i] += g * (sig - (*targets_sp)[static_cast<std::size_t>(i)]) / static_cast<double>(m);
      }
    });
    return out;
  }

  // ---------------------------------------------------------------- backward
  // Zeroes the gradient buffers of every tensor this tape touched, seeds the
  // scalar loss with 1, and replays all recorded steps in reverse.
  void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
      throw DimensionError("backward: loss must be scalar, got " + loss.shape());
    for (auto& t : touched_) {
      t.ensure_grad();
      t.zero_grad();
    }
    Tensor seed = loss;
    seed.ensure_grad();
    seed.zero_grad();
    seed.grad()[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  static void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
      throw DimensionError(std::string(op) + ": " + a.shape() + " vs " + b.shape());
  }

  static void validate_offsets(const std::vector<Index>& offsets, Index total) {
    if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != total)
      throw DimensionError("softmax_groups: offsets must start at 0 and end at " +
                           std::to_string(total));
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
      if (offsets[g + 1] < offsets[g])
        throw DimensionError("softmax_groups: offsets must be non-decreasing");
      if (offsets[g + 1] == offsets[g])
        throw DataError("softmax_groups: group " + std::to_string(g) + " is empty");
    }
  }

  static void matmul_accumulate(const double* a, const double* b, double* c, Index m, Index k,
                                Index n) {
    for (Index i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * n;
      for (Index p = 0; p < k; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (Index j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }

  void check_finite(const Tensor& t, const char* op) const {
    if (!t.all_finite())
      throw NumericError(std::string(op) + " produced a non-finite value (shape " + t.shape() +
                         ")");
  }

  void finish(Tensor& out, const char* op, std::initializer_list<Tensor> inputs,
              std::function<void()> backward_fn) {
    check_finite(out, op);
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
    out.set_requires_grad(needs_grad && recording_);
    if (!recording_ || !needs_grad) return;
    for (const auto& in : inputs) touch(in);
    touch(out);
    steps_.push_back(std::move(backward_fn));
  }

  void touch(const Tensor& t) {
    if (seen_.insert(t.storage_key()).second) touched_.push_back(t);
  }

  bool recording_;
  std::vector<std::function<void()>> steps_;
  std::vector<Tensor> touched_;
  std::unordered_set<const void*> seen_;
};

}  // namespace hetcan
