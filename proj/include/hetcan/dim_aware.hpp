#pragma once
// Dimension-aware encoder: treats each node's hidden vector as a short
// sequence of feature tokens and runs self-attention within the node. Nodes
// never exchange information here; the block width of every batched op is
// the per-node token count.

#include <cmath>
#include <string>
#include <vector>

#include "hetcan/tape.hpp"
#include "hetcan/type_aware.hpp"

namespace hetcan {

struct DimHead {
  Tensor w_q, w_k, w_v;  // [t x d_k], [t x d_k], [t x d_v]
};

struct DimLayer {
  std::vector<DimHead> heads;
  Tensor w_o;               // [(heads * d_v) x t]
  Tensor ln_gain, ln_bias;  // [1 x t], follow the attention sub-layer
  bool residual_ln = true;  // wrap each sub-layer in residual + LayerNorm
  bool ffn = false;
  Tensor w1, b1, w2, b2;      // [t x m], [1 x m], [m x t], [1 x t]
  Tensor ln2_gain, ln2_bias;  // [1 x t], follow the FFN sub-layer
};

inline DimLayer make_dim_layer(Index t, Index d_k, Index d_v, Index heads, Rng& rng,
                               bool ffn = false, Index ffn_width = 0, bool residual_ln = true) {
  if (t <= 0 || d_k <= 0 || d_v <= 0 || heads <= 0)
    throw ConfigError("token layer sizes must be positive");
  DimLayer layer;
  for (Index k = 0; k < heads; ++k) {
    DimHead h;
    h.w_q = Tensor::glorot(t, d_k, rng);
    h.w_k = Tensor::glorot(t, d_k, rng);
    h.w_v = Tensor::glorot(t, d_v, rng);
    layer.heads.push_back(h);
  }
  layer.w_o = Tensor::glorot(heads * d_v, t, rng);
  layer.residual_ln = residual_ln;
  if (residual_ln) {
    layer.ln_gain = Tensor::ones(1, t);
    layer.ln_gain.set_requires_grad(true);
    layer.ln_bias = Tensor(1, t, true);
  }
  layer.ffn = ffn;
  if (ffn) {
    const Index m = ffn_width > 0 ? ffn_width : 2 * t;
    layer.w1 = Tensor::glorot(t, m, rng);
    layer.b1 = Tensor(1, m, true);
    layer.w2 = Tensor::glorot(m, t, rng);
    layer.b2 = Tensor(1, t, true);
    if (residual_ln) {
      layer.ln2_gain = Tensor::ones(1, t);
      layer.ln2_gain.set_requires_grad(true);
      layer.ln2_bias = Tensor(1, t, true);
    }
  }
  return layer;
}

inline std::vector<Tensor> dim_layer_params(const DimLayer& layer) {
  std::vector<Tensor> out;
  for (const auto& h : layer.heads) {
    out.push_back(h.w_q);
    out.push_back(h.w_k);
    out.push_back(h.w_v);
  }
  out.push_back(layer.w_o);
  if (layer.ffn) {
    out.push_back(layer.w1);
    out.push_back(layer.b1);
    out.push_back(layer.w2);
    out.push_back(layer.b2);
  }
  if (layer.residual_ln) {
    out.push_back(layer.ln_gain);
    out.push_back(layer.ln_bias);
    if (layer.ffn) {
      out.push_back(layer.ln2_gain);
      out.push_back(layer.ln2_bias);
    }
  }
  return out;
}

// [n x d] -> [n*T x t] where T = d / t; row i*T+tau holds dims
// [tau*t, tau*t + t) of node i.
inline Tensor expand_tokens(GradientTape& tape, const Tensor& h, Index token_width) {
  if (token_width <= 0 || h.cols() % token_width != 0)
    throw ConfigError("token width " + std::to_string(token_width) +
                      " must divide the hidden width " + std::to_string(h.cols()));
  const Index tokens_per_node = h.cols() / token_width;
  return tape.reshape_copy(h, h.rows() * tokens_per_node, token_width);
}

inline Tensor flatten_tokens(GradientTape& tape, const Tensor& tokens, Index n, Index d) {
  return tape.reshape_copy(tokens, n, d);
}

// one self-attention block over the token rows; `tokens_per_node` bounds the
// attention so tokens only see their own node's tokens
inline Tensor dim_layer_forward(GradientTape& tape, const Tensor& tokens, Index tokens_per_node,
                                const DimLayer& layer, double ln_eps) {
  if (layer.heads.empty()) throw ConfigError("token layer has no heads");
  const double scale = 1.0 / std::sqrt(static_cast<double>(layer.heads[0].w_q.cols()));
  Tensor cat;
  for (std::size_t k = 0; k < layer.heads.size(); ++k) {
    const DimHead& head = layer.heads[k];
    Tensor q = tape.matmul(tokens, head.w_q);
    Tensor key = tape.matmul(tokens, head.w_k);
    Tensor v = tape.matmul(tokens, head.w_v);
    Tensor probs = tape.row_softmax(tape.block_scores(q, key, tokens_per_node, scale));
    Tensor mixed = tape.block_apply(probs, v, tokens_per_node);
    cat = k == 0 ? mixed : tape.concat_cols(cat, mixed);
  }
  Tensor proj = tape.matmul(cat, layer.w_o);
  Tensor out = layer.residual_ln
                   ? tape.layer_norm(tape.add(proj, tokens), layer.ln_gain, layer.ln_bias, ln_eps)
                   : proj;
  if (layer.ffn) {
    Tensor hid = tape.relu(tape.add_row_bias(tape.matmul(out, layer.w1), layer.b1));
    Tensor back = tape.add_row_bias(tape.matmul(hid, layer.w2), layer.b2);
    if (layer.residual_ln)
      out = tape.layer_norm(tape.add(back, out), layer.ln2_gain, layer.ln2_bias, ln_eps);
    else
      out = back;
  }
  return out;
}

struct DimOptions {
  Index token_width = 0;  // t; must divide the hidden width
  double ln_eps = 1e-5;
  double dropout = 0.0;
  bool training = false;
};

// type modulation, token expansion, L_d attention blocks, flatten back.
// With no layers this reduces to the type modulation alone.
inline Tensor dim_encoder_forward(GradientTape& tape, const Tensor& h, const Wiring& wiring,
                                  const Tensor& type_table, const std::vector<DimLayer>& layers,
                                  const DimOptions& opt, Rng& rng, bool skip_combine = false) {
  Tensor x = skip_combine ? h : combine(tape, h, wiring, type_table);
  if (layers.empty()) return x;
  const Index tokens_per_node = h.cols() / opt.token_width;  // validated by expand
  Tensor tokens = expand_tokens(tape, x, opt.token_width);
  for (const auto& layer : layers) {
    Tensor in = tape.dropout(tokens, opt.dropout, opt.training, rng);
    tokens = dim_layer_forward(tape, in, tokens_per_node, layer, opt.ln_eps);
  }
  return flatten_tokens(tape, tokens, h.rows(), h.cols());
}

}  // namespace hetcan
