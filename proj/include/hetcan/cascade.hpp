#pragma once
// The full model: per-type input projections feeding N cascade blocks, each a
// type-aware attention stack concatenated with a dimension-aware stack, plus
// the task heads, losses, and the Adam training step.

#include <cstdint>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hetcan/adam.hpp"
#include "hetcan/dim_aware.hpp"
#include "hetcan/graph.hpp"
#include "hetcan/type_aware.hpp"

namespace hetcan {

enum class Task { node_classification, link_prediction };

inline Task parse_task(const std::string& s) {
  if (s == "node" || s == "node_classification") return Task::node_classification;
  if (s == "link" || s == "link_prediction") return Task::link_prediction;
  throw ConfigError("unknown task '" + s + "' (expected node or link)");
}

inline std::string task_name(Task t) {
  return t == Task::node_classification ? "node" : "link";
}

// Ablation variants: no_type freezes every type table at all-ones; no_dim
// drops the dimension-aware layers (the concatenation stays 2d wide).
enum class Variant { full, no_type, no_dim };

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_type") return Variant::no_type;
  if (s == "no_dim") return Variant::no_dim;
  throw ConfigError("unknown ablation '" + s + "' (expected full, no_type or no_dim)");
}

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::no_type: return "no_type";
    case Variant::no_dim: return "no_dim";
    default: return "full";
  }
}

struct CascadeConfig {
  Index blocks = 1;      // cascade depth N
  Index layers = 2;      // type-aware layers per block
  Index dim_layers = 1;  // dimension-aware layers per block
  Index hidden = 64;     // shared hidden width d
  Index heads = 1;       // type-aware heads
  Index dim_heads = 1;   // dimension-aware heads
  double beta = 0.05;    // attention residual weight
  Index edge_table_dim = 8;  // width of the raw edge-type embedding rows
  Index edge_proj_dim = 0;   // width after the edge projection; 0 = same as table
  Index token_width = 1;     // t; must divide hidden
  Index dim_qk = 0;          // query/key width in the dim encoder; 0 = token_width
  Index dim_value = 0;       // value width in the dim encoder; 0 = token_width
  double dropout_hidden = 0.0;
  double dropout_attn = 0.0;
  bool ffn_in_dim_encoder = false;
  bool residual_ln_in_dim_encoder = true;
  bool share_type_table = true;  // one table per block feeds both encoders
  bool l2_normalize_output = false;
  bool symmetrize_edges = true;
  std::string feature_fallback = "one_hot";  // for featureless node types: one_hot | all_one
  Task task = Task::node_classification;
  std::uint64_t seed = 1;

  Index edge_attn_width() const { return edge_proj_dim > 0 ? edge_proj_dim : edge_table_dim; }
  Index qk_width() const { return dim_qk > 0 ? dim_qk : token_width; }
  Index value_width() const { return dim_value > 0 ? dim_value : token_width; }

  void validate() const {
    if (blocks <= 0 || layers <= 0 || hidden <= 0 || heads <= 0 || dim_heads <= 0 ||
        edge_table_dim <= 0 || token_width <= 0)
      throw ConfigError("model dimensions must be positive");
    if (dim_layers < 0) throw ConfigError("dim_layers must be >= 0");
    if (beta < 0.0 || beta > 1.0)
      throw ConfigError("beta must lie in [0,1], got " + std::to_string(beta));
    if (hidden % token_width != 0)
      throw ConfigError("token_width " + std::to_string(token_width) +
                        " must divide hidden " + std::to_string(hidden));
    if (dropout_hidden < 0.0 || dropout_hidden >= 1.0 || dropout_attn < 0.0 ||
        dropout_attn >= 1.0)
      throw ConfigError("dropout rates must lie in [0,1)");
    if (feature_fallback != "one_hot" && feature_fallback != "all_one")
      throw ConfigError("feature_fallback must be one_hot or all_one, got " + feature_fallback);
  }
};

// graph-derived shape information a model is built against
struct GraphDims {
  Index num_node_types = 0;
  std::vector<Index> feat_dim;
  Index num_edge_types = 0;  // excludes the reserved self-loop type
  Index num_classes = 0;     // 0 when no classifier is needed

  static GraphDims of(const HeteroGraph& g) {
    GraphDims d;
    d.num_node_types = g.num_node_types;
    d.feat_dim = g.feat_dim;
    d.num_edge_types = g.num_edge_types;
    d.num_classes = g.num_classes;
    return d;
  }
};

struct CascadeBlock {
  Tensor type_table;      // [num_node_types x d]
  Tensor dim_type_table;  // same storage when the table is shared
  std::vector<TypeAwareLayer> layers;
  std::vector<DimLayer> dim_layers;
  Tensor inter_w, inter_b;  // 2d -> d bridge to the next block; empty on the last
};

struct ModelState {
  CascadeConfig cfg;
  Variant variant = Variant::full;
  GraphDims dims;
  ProjectionParams projection;
  Tensor edge_table;  // [(num_edge_types + 1) x d_r]; last row is the self-loop type
  std::vector<CascadeBlock> blocks;
  Tensor classifier;  // [2d x C]; empty for link prediction

  std::vector<std::string> names;  // checkpoint order
  std::vector<Tensor> tensors;
  std::vector<Tensor> trainable;  // the subset Adam updates
  AdamState adam;
  Index epoch = 0;
};

namespace detail_model {
inline void reg(ModelState& st, const std::string& name, const Tensor& t, bool trainable) {
  st.names.push_back(name);
  st.tensors.push_back(t);
  if (trainable) st.trainable.push_back(t);
}
}  // namespace detail_model

inline ModelState build_model(CascadeConfig cfg, const GraphDims& dims, std::uint64_t seed,
                              Variant variant = Variant::full) {
  cfg.validate();
  if (dims.num_node_types <= 0 || static_cast<Index>(dims.feat_dim.size()) != dims.num_node_types)
    throw ConfigError("model needs per-type feature widths for every node type");
  if (cfg.task == Task::node_classification && dims.num_classes <= 0)
    throw ConfigError("node classification needs at least one class");
  if (variant == Variant::no_dim) cfg.dim_layers = 0;

  ModelState st;
  st.cfg = cfg;
  st.variant = variant;
  st.dims = dims;
  Rng rng(seed);
  const Index d = cfg.hidden;
  const bool freeze_tables = variant == Variant::no_type;

  for (Index t = 0; t < dims.num_node_types; ++t) {
    st.projection.w.push_back(Tensor::glorot(dims.feat_dim[static_cast<std::size_t>(t)], d, rng));
    st.projection.b.push_back(Tensor(1, d, true));
    detail_model::reg(st, "proj.w" + std::to_string(t), st.projection.w.back(), true);
    detail_model::reg(st, "proj.b" + std::to_string(t), st.projection.b.back(), true);
  }

  st.edge_table = Tensor::glorot(dims.num_edge_types + 1, cfg.edge_table_dim, rng);
  detail_model::reg(st, "edge_table", st.edge_table, true);

  for (Index b = 0; b < cfg.blocks; ++b) {
    CascadeBlock block;
    const std::string pre = "block" + std::to_string(b) + ".";
    block.type_table = freeze_tables ? Tensor::ones(dims.num_node_types, d)
                                     : Tensor::ones_with_noise(dims.num_node_types, d, rng, 0.01);
    detail_model::reg(st, pre + "type_table", block.type_table, !freeze_tables);
    if (cfg.share_type_table) {
      block.dim_type_table = block.type_table;
    } else {
      block.dim_type_table = freeze_tables
                                 ? Tensor::ones(dims.num_node_types, d)
                                 : Tensor::ones_with_noise(dims.num_node_types, d, rng, 0.01);
      detail_model::reg(st, pre + "dim_type_table", block.dim_type_table, !freeze_tables);
    }
    for (Index l = 0; l < cfg.layers; ++l) {
      block.layers.push_back(
          make_type_aware_layer(d, cfg.edge_table_dim, cfg.edge_attn_width(), cfg.heads, rng));
      for (std::size_t k = 0; k < block.layers.back().heads.size(); ++k) {
        const std::string hp = pre + "layer" + std::to_string(l) + ".head" + std::to_string(k) + ".";
        const TypeAwareHead& hd = block.layers.back().heads[k];
        detail_model::reg(st, hp + "w", hd.w, true);
        detail_model::reg(st, hp + "w_r", hd.w_r, true);
        detail_model::reg(st, hp + "a_dst", hd.a_dst, true);
        detail_model::reg(st, hp + "a_src", hd.a_src, true);
        detail_model::reg(st, hp + "a_edge", hd.a_edge, true);
      }
    }
    for (Index l = 0; l < cfg.dim_layers; ++l) {
      block.dim_layers.push_back(make_dim_layer(cfg.token_width, cfg.qk_width(),
                                                cfg.value_width(), cfg.dim_heads, rng,
                                                cfg.ffn_in_dim_encoder, 0,
                                                cfg.residual_ln_in_dim_encoder));
      const DimLayer& dl = block.dim_layers.back();
      const std::string dp = pre + "dim" + std::to_string(l) + ".";
      for (std::size_t k = 0; k < dl.heads.size(); ++k) {
        const std::string hp = dp + "head" + std::to_string(k) + ".";
        detail_model::reg(st, hp + "w_q", dl.heads[k].w_q, true);
        detail_model::reg(st, hp + "w_k", dl.heads[k].w_k, true);
        detail_model::reg(st, hp + "w_v", dl.heads[k].w_v, true);
      }
      detail_model::reg(st, dp + "w_o", dl.w_o, true);
      if (dl.ffn) {
        detail_model::reg(st, dp + "ffn.w1", dl.w1, true);
        detail_model::reg(st, dp + "ffn.b1", dl.b1, true);
        detail_model::reg(st, dp + "ffn.w2", dl.w2, true);
        detail_model::reg(st, dp + "ffn.b2", dl.b2, true);
      }
      if (dl.residual_ln) {
        detail_model::reg(st, dp + "ln.gain", dl.ln_gain, true);
        detail_model::reg(st, dp + "ln.bias", dl.ln_bias, true);
        if (dl.ffn) {
          detail_model::reg(st, dp + "ln2.gain", dl.ln2_gain, true);
          detail_model::reg(st, dp + "ln2.bias", dl.ln2_bias, true);
        }
      }
    }
    if (b + 1 < cfg.blocks) {
      block.inter_w = Tensor::glorot(2 * d, d, rng);
      block.inter_b = Tensor(1, d, true);
      detail_model::reg(st, pre + "inter.w", block.inter_w, true);
      detail_model::reg(st, pre + "inter.b", block.inter_b, true);
    }
    st.blocks.push_back(std::move(block));
  }

  if (cfg.task == Task::node_classification) {
    st.classifier = Tensor::glorot(2 * d, dims.num_classes, rng);
    detail_model::reg(st, "classifier", st.classifier, true);
  }
  st.adam.match(st.trainable);
  return st;
}

struct ForwardOptions {
  bool training = false;
  bool skip_combine = false;  // bypass both type-modulation steps (ablation identity)
};

struct ModelOutput {
  Tensor h;  // [n x 2d]
  // attention coefficients after residual mixing: [block][layer][head], [E x 1]
  std::vector<std::vector<std::vector<Tensor>>> alpha;
};

// one cascade block: H' from the graph-attention stack, H-bar from the token
// stack applied to H', concatenated to width 2d
inline std::pair<Tensor, std::vector<std::vector<Tensor>>> block_forward(
    GradientTape& tape, const Tensor& h, const Wiring& wiring, const CascadeBlock& block,
    const Tensor& edge_table, const CascadeConfig& cfg, const ForwardOptions& opt,
    bool last_block, Rng& rng) {
  TypeAwareOptions ta;
  ta.beta = cfg.beta;
  ta.dropout_hidden = cfg.dropout_hidden;
  ta.dropout_attn = cfg.dropout_attn;
  ta.training = opt.training;
  EncoderResult enc = type_aware_encoder_forward(tape, h, wiring, block.type_table, edge_table,
                                                 block.layers, ta, /*identity_last=*/last_block,
                                                 rng, opt.skip_combine);
  DimOptions dopt;
  dopt.token_width = cfg.token_width;
  dopt.dropout = cfg.dropout_hidden;
  dopt.training = opt.training;
  Tensor hbar = dim_encoder_forward(tape, enc.h, wiring, block.dim_type_table, block.dim_layers,
                                    dopt, rng, opt.skip_combine);
  return {tape.concat_cols(enc.h, hbar), std::move(enc.alpha_hat)};
}

inline ModelOutput model_forward(GradientTape& tape, const HeteroGraph& g, const Wiring& wiring,
                                 const ModelState& st, const ForwardOptions& opt, Rng& rng) {
  ModelOutput out;
  Tensor h = project_features(tape, g, st.projection, st.cfg.hidden);
  for (Index b = 0; b < st.cfg.blocks; ++b) {
    const CascadeBlock& block = st.blocks[static_cast<std::size_t>(b)];
    const bool last = b + 1 == st.cfg.blocks;
    auto [h2d, alpha] = block_forward(tape, h, wiring, block, st.edge_table, st.cfg, opt, last,
                                      rng);
    out.alpha.push_back(std::move(alpha));
    if (last)
      out.h = h2d;
    else
      h = tape.add_row_bias(tape.matmul(h2d, block.inter_w), block.inter_b);
  }
  if (st.cfg.l2_normalize_output) out.h = tape.l2_normalize_rows(out.h, 1e-12);
  return out;
}

inline Tensor classify_head(GradientTape& tape, const Tensor& h, const ModelState& st) {
  if (st.classifier.empty()) throw ConfigError("model has no classification head");
  return tape.matmul(h, st.classifier);
}

// ---------------------------------------------------------------------------
// link prediction plumbing
// ---------------------------------------------------------------------------

struct EdgeBatch {
  std::vector<Index> src, dst;
  std::size_t size() const { return src.size(); }
};

inline std::unordered_set<std::int64_t> edge_key_set(const HeteroGraph& g) {
  std::unordered_set<std::int64_t> keys;
  keys.reserve(g.src.size() * 2);
  for (std::size_t e = 0; e < g.src.size(); ++e) keys.insert(g.src[e] * g.n + g.dst[e]);
  return keys;
}

// one negative per positive: same source, destination redrawn uniformly among
// nodes of the original destination's type, avoiding existing edges
inline EdgeBatch sample_negatives(const EdgeBatch& pos, const HeteroGraph& g,
                                  const std::unordered_set<std::int64_t>& true_edges, Rng& rng) {
  EdgeBatch neg;
  neg.src = pos.src;
  neg.dst.reserve(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const Index s = pos.src[i];
    const auto& pool =
        g.nodes_of_type[static_cast<std::size_t>(g.node_type[static_cast<std::size_t>(pos.dst[i])])];
    if (pool.empty()) throw DataError("negative sampling: empty candidate pool");
    Index pick = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    for (int attempt = 0; attempt < 200; ++attempt) {
      if (pick != s && true_edges.count(s * g.n + pick) == 0) break;
      pick = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    }
    neg.dst.push_back(pick);
  }
  return neg;
}

inline Tensor link_scores(GradientTape& tape, const Tensor& h, const EdgeBatch& batch) {
  return tape.pair_dot(h, batch.src, batch.dst);
}

inline Tensor link_loss(GradientTape& tape, const Tensor& h, const EdgeBatch& pos,
                        const EdgeBatch& neg) {
  if (pos.size() == 0) throw DataError("link loss needs at least one positive edge");
  EdgeBatch all;
  all.src = pos.src;
  all.dst = pos.dst;
  all.src.insert(all.src.end(), neg.src.begin(), neg.src.end());
  all.dst.insert(all.dst.end(), neg.dst.begin(), neg.dst.end());
  std::vector<double> targets(pos.size(), 1.0);
  targets.resize(pos.size() + neg.size(), 0.0);
  return tape.bce_with_logits(link_scores(tape, h, all), targets);
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

inline bool is_multilabel(const HeteroGraph& g) {
  for (const auto& l : g.labels)
    if (l.size() > 1) return true;
  return false;
}

inline Tensor multilabel_targets(const HeteroGraph& g) {
  Tensor t(g.n, g.num_classes);
  for (Index i = 0; i < g.n; ++i)
    for (int32_t c : g.labels[static_cast<std::size_t>(i)]) t.at(i, c) = 1.0;
  return t;
}

struct TrainBatch {
  std::vector<Index> nodes;  // node classification: labeled training nodes
  EdgeBatch pos, neg;        // link prediction: positives plus sampled negatives
};

// forward, loss, backward, Adam. Returns the loss value. Non-finite losses or
// gradients abort with magnitude diagnostics instead of silently continuing.
inline double train_step(const HeteroGraph& g, const Wiring& wiring, ModelState& st,
                         const TrainBatch& batch, const AdamOptions& opt, Rng& rng) {
  GradientTape tape(true);
  ForwardOptions fo;
  fo.training = true;
  Tensor logits;
  try {
    ModelOutput out = model_forward(tape, g, wiring, st, fo, rng);
    Tensor loss;
    if (st.cfg.task == Task::node_classification) {
      if (batch.nodes.empty()) throw DataError("training batch has no labeled nodes");
      logits = classify_head(tape, out.h, st);
      if (is_multilabel(g))
        loss = tape.sigmoid_bce_rows(logits, multilabel_targets(g), batch.nodes);
      else
        loss = tape.softmax_cross_entropy(logits, g.single_labels(), batch.nodes);
    } else {
      logits = link_scores(tape, out.h, batch.pos);  // for diagnostics only
      loss = link_loss(tape, out.h, batch.pos, batch.neg);
    }
    const double lval = loss.at(0, 0);
    tape.backward(loss);
    double gmax = 0.0;
    for (const auto& p : st.trainable) {
      Tensor t = p;
      t.ensure_grad();
      for (Index c = 0; c < t.size(); ++c) {
        const double gv = t.grad()[c];
        if (!std::isfinite(gv))
          throw NumericError("non-finite gradient (max |logit| = " +
                             std::to_string(max_abs(logits)) + ", max |grad| so far = " +
                             std::to_string(gmax) + ")");
        gmax = std::max(gmax, std::fabs(gv));
      }
    }
    adam_step(st.trainable, st.adam, opt);
    return lval;
  } catch (const NumericError& e) {
    std::string diag = e.what();
    if (!logits.empty()) diag += " [max |logit| = " + std::to_string(max_abs(logits)) + "]";
    throw NumericError(diag);
  }
}

}  // namespace hetcan
