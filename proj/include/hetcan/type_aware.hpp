#pragma once

#include <string>
#include <vector>

#include "hetcan/graph.hpp"
#include "hetcan/rng.hpp"
#include "hetcan/tape.hpp"
#include "hetcan/tensor.hpp"

namespace hetcan {

// Flat view of a graph's incoming adjacency used by the encoders. Slots are
// the CSR positions: contiguous per destination node, so a grouped softmax
// over `offsets` is exactly a per-neighborhood softmax.
struct Wiring {
  std::vector<Index> offsets;  // n+1
  std::vector<Index> src;      // slot -> source node
  std::vector<Index> owner;    // slot -> destination node
  std::vector<Index> etype;    // slot -> edge-type row
  std::vector<Index> node_type;  // node -> type id (Index-typed for gathers)
  Index n = 0;
  Index num_slots = 0;
};

inline Wiring make_wiring(const HeteroGraph& g) {
  Wiring w;
  w.n = g.n;
  w.num_slots = g.num_edges();
  w.offsets = g.in_offsets;
  w.src = g.in_src;
  w.etype.assign(g.in_etype.begin(), g.in_etype.end());
  w.owner.resize(static_cast<std::size_t>(g.num_edges()));
  for (Index v = 0; v < g.n; ++v)
    for (Index s = g.in_offsets[static_cast<std::size_t>(v)];
         s < g.in_offsets[static_cast<std::size_t>(v) + 1]; ++s)
      w.owner[static_cast<std::size_t>(s)] = v;
  w.node_type.assign(g.node_type.begin(), g.node_type.end());
  return w;
}

// All matrices are stored for row-vector right-multiplication: a map from
// width p to width q is kept as a [p x q] tensor applied as X * W.
struct ProjectionParams {
  std::vector<Tensor> w;  // per node type, [d_x(type) x d]
  std::vector<Tensor> b;  // per node type, [1 x d]
};

inline ProjectionParams make_projection(const HeteroGraph& g, Index d, Rng& rng) {
  ProjectionParams p;
  for (Index t = 0; t < g.num_node_types; ++t) {
    p.w.push_back(Tensor::glorot(g.feat_dim[static_cast<std::size_t>(t)], d, rng));
    p.b.push_back(Tensor(1, d, true));
  }
  return p;
}

// row v of the result = features[v] * W_type(v) + b_type(v), computed as one
// matmul per node type and scattered back to node order
inline Tensor project_features(GradientTape& tape, const HeteroGraph& g,
                               const ProjectionParams& p, Index d) {
  Tensor h;
  bool first = true;
  for (Index t = 0; t < g.num_node_types; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    if (g.type_count(t) == 0) continue;
    if (p.w[ti].rows() != g.feat_dim[ti])
      throw DimensionError("project_features: node type " + std::to_string(t) +
                           " has feature width " + std::to_string(g.feat_dim[ti]) +
                           " but projection expects " + std::to_string(p.w[ti].rows()));
    Tensor block = tape.add_row_bias(tape.matmul(g.features[ti], p.w[ti]), p.b[ti]);
    Tensor placed = tape.scatter_rows(block, g.nodes_of_type[ti], g.n);
    h = first ? placed : tape.add(h, placed);
    first = false;
  }
  (void)d;
  return h;
}

// Hadamard modulation by the node-type embedding table [num_types x d].
inline Tensor combine(GradientTape& tape, const Tensor& h, const Wiring& w,
                      const Tensor& type_table) {
  Tensor rows = tape.gather_rows(type_table, w.node_type);
  return tape.hadamard(h, rows);
}

struct TypeAwareHead {
  Tensor w;       // [d x d]
  Tensor w_r;     // [d_r x d_e]
  Tensor a_dst;   // [d x 1]   (first d entries of the concat attention vector)
  Tensor a_src;   // [d x 1]   (next d entries)
  Tensor a_edge;  // [d_e x 1] (last d_e entries)
};

struct TypeAwareLayer {
  std::vector<TypeAwareHead> heads;
};

inline TypeAwareLayer make_type_aware_layer(Index d, Index d_r, Index d_e, Index heads,
                                            Rng& rng) {
  TypeAwareLayer layer;
  for (Index k = 0; k < heads; ++k) {
    TypeAwareHead h;
    h.w = Tensor::glorot(d, d, rng);
    h.w_r = Tensor::glorot(d_r, d_e, rng);
    h.a_dst = Tensor::glorot(d, 1, rng);
    h.a_src = Tensor::glorot(d, 1, rng);
    h.a_edge = Tensor::glorot(d_e, 1, rng);
    layer.heads.push_back(h);
  }
  return layer;
}

// Per-slot attention coefficients for one head: softmax over each node's
// incoming slots of LeakyReLU(a . [W h_dst || W h_src || W_r r_edge]).
// `wh` must be h * W for the same head. The edge-type term is evaluated
// per slot (gather then project), so its cost scales with the edge count.
inline Tensor attention_coefficients(GradientTape& tape, const Tensor& wh, const Wiring& wiring,
                                     const Tensor& edge_table, const TypeAwareHead& head,
                                     double slope) {
  for (Index v = 0; v < wiring.n; ++v)
    if (wiring.offsets[static_cast<std::size_t>(v)] ==
        wiring.offsets[static_cast<std::size_t>(v) + 1])
      throw DataError("attention: node " + std::to_string(v) +
                      " has no incoming edges; add self-loops first");

  Tensor s_dst = tape.matmul(wh, head.a_dst);  // [n x 1]
  Tensor s_src = tape.matmul(wh, head.a_src);  // [n x 1]
  Tensor r_rows = tape.gather_rows(edge_table, wiring.etype);       // [E x d_r]
  Tensor r_proj = tape.matmul(r_rows, head.w_r);                    // [E x d_e]
  Tensor s_edge = tape.matmul(r_proj, head.a_edge);                 // [E x 1]

  Tensor logits = tape.add(
      tape.add(tape.gather_rows(s_dst, wiring.owner), tape.gather_rows(s_src, wiring.src)),
      s_edge);
  logits = tape.leaky_relu(logits, slope);
  return tape.softmax_groups(logits, wiring.offsets);
}

// Convex mixing with the previous layer's coefficients (first layer: pass an
// empty alpha_prev).
inline Tensor attention_residual(GradientTape& tape, const Tensor& alpha_now,
                                 const Tensor& alpha_prev, double beta) {
  if (beta < 0.0 || beta > 1.0)
    throw ConfigError("attention residual weight must lie in [0,1], got " +
                      std::to_string(beta));
  if (alpha_prev.empty()) return alpha_now;
  if (alpha_prev.rows() != alpha_now.rows())
    throw DimensionError("attention residual: " + std::to_string(alpha_now.rows()) +
                         " edges now vs " + std::to_string(alpha_prev.rows()) + " before");
  return tape.lincomb(1.0 - beta, alpha_now, beta, alpha_prev);
}

// One head's neighborhood aggregation: row i = act(sum over incoming slots
// alpha * (W h_src)).
inline Tensor aggregate_head(GradientTape& tape, const Tensor& wh, const Wiring& wiring,
                             const Tensor& alpha, double slope, bool identity_act) {
  Tensor agg = tape.edge_aggregate(wh, alpha, wiring.src, wiring.owner, wiring.n);
  return identity_act ? agg : tape.leaky_relu(agg, slope);
}

struct TypeAwareOptions {
  double beta = 0.05;
  double slope = 0.2;
  double dropout_hidden = 0.0;
  double dropout_attn = 0.0;
  bool training = false;
};

struct LayerResult {
  Tensor h;
  std::vector<Tensor> alpha_hat;  // per head, [E x 1]
};

// Full layer: per head, attention + residual mixing + aggregation; heads are
// averaged before the activation.
inline LayerResult layer_forward(GradientTape& tape, const Tensor& h, const Wiring& wiring,
                                 const Tensor& edge_table, const TypeAwareLayer& layer,
                                 const std::vector<Tensor>& alpha_prev,
                                 const TypeAwareOptions& opt, bool identity_act, Rng& rng) {
  if (!alpha_prev.empty() && alpha_prev.size() != layer.heads.size())
    throw DimensionError("layer_forward: " + std::to_string(alpha_prev.size()) +
                         " residual streams for " + std::to_string(layer.heads.size()) +
                         " heads");
  LayerResult res;
  Tensor sum;
  for (std::size_t k = 0; k < layer.heads.size(); ++k) {
    const TypeAwareHead& head = layer.heads[k];
    Tensor wh = tape.matmul(h, head.w);
    Tensor alpha = attention_coefficients(tape, wh, wiring, edge_table, head, opt.slope);
    Tensor mixed = attention_residual(tape, alpha,
                                      alpha_prev.empty() ? Tensor() : alpha_prev[k], opt.beta);
    res.alpha_hat.push_back(mixed);
    Tensor used = tape.dropout(mixed, opt.dropout_attn, opt.training, rng);
    Tensor part = aggregate_head(tape, wh, wiring, used, opt.slope, /*identity_act=*/true);
    sum = k == 0 ? part : tape.add(sum, part);
  }
  Tensor avg = layer.heads.size() == 1
                   ? sum
                   : tape.scale(sum, 1.0 / static_cast<double>(layer.heads.size()));
  res.h = identity_act ? avg : tape.leaky_relu(avg, opt.slope);
  return res;
}

struct EncoderResult {
  Tensor h;
  // alpha_hat[layer][head], each [E x 1]; exposed for normalization checks
  std::vector<std::vector<Tensor>> alpha_hat;
};

// The L-layer stack: type modulation once, then attention layers threaded
// with the cross-layer residual. When `identity_last` is set the final
// layer's activation is the identity (used by the last block of a model).
inline EncoderResult type_aware_encoder_forward(GradientTape& tape, const Tensor& h_in,
                                                const Wiring& wiring, const Tensor& type_table,
                                                const Tensor& edge_table,
                                                const std::vector<TypeAwareLayer>& layers,
                                                const TypeAwareOptions& opt, bool identity_last,
                                                Rng& rng, bool skip_combine = false) {
  if (layers.empty()) throw ConfigError("type-aware encoder needs at least one layer");
  EncoderResult res;
  Tensor h = skip_combine ? h_in : combine(tape, h_in, wiring, type_table);
  std::vector<Tensor> alpha_prev;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Tensor in = tape.dropout(h, opt.dropout_hidden, opt.training, rng);
    const bool identity_act = identity_last && l + 1 == layers.size();
    LayerResult lr =
        layer_forward(tape, in, wiring, edge_table, layers[l], alpha_prev, opt, identity_act, rng);
    h = lr.h;
    alpha_prev = lr.alpha_hat;
    res.alpha_hat.push_back(std::move(lr.alpha_hat));
  }
  res.h = h;
  return res;
}

}  // namespace hetcan
