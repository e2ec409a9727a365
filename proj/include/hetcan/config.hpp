#pragma once
// Flat key = value run configuration. The same reader handles the model-shape
// keys inside checkpoint trailers, so both stay in sync by construction.

#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "hetcan/cascade.hpp"
#include "hetcan/kv_file.hpp"

namespace hetcan {

inline CascadeConfig read_cascade_config(KvReader& r) {
  CascadeConfig c;
  c.blocks = r.get_index("blocks", c.blocks);
  c.layers = r.get_index("layers", c.layers);
  c.dim_layers = r.get_index("dim_layers", c.dim_layers);
  c.hidden = r.get_index("hidden", c.hidden);
  c.heads = r.get_index("heads", c.heads);
  c.dim_heads = r.get_index("dim_heads", c.dim_heads);
  c.beta = r.get_double("beta", c.beta);
  c.edge_table_dim = r.get_index("edge_table_dim", c.edge_table_dim);
  c.edge_proj_dim = r.get_index("edge_proj_dim", c.edge_proj_dim);
  c.token_width = r.get_index("token_width", c.token_width);
  c.dim_qk = r.get_index("dim_qk", c.dim_qk);
  c.dim_value = r.get_index("dim_value", c.dim_value);
  c.dropout_hidden = r.get_double("dropout_hidden", c.dropout_hidden);
  c.dropout_attn = r.get_double("dropout_attn", c.dropout_attn);
  c.ffn_in_dim_encoder = r.get_bool("ffn_in_dim_encoder", c.ffn_in_dim_encoder);
  c.residual_ln_in_dim_encoder =
      r.get_bool("residual_ln_in_dim_encoder", c.residual_ln_in_dim_encoder);
  c.share_type_table = r.get_bool("share_type_table", c.share_type_table);
  c.symmetrize_edges = r.get_bool("symmetrize_edges", c.symmetrize_edges);
  c.feature_fallback = r.get_string("feature_fallback", c.feature_fallback);
  c.task = parse_task(r.get_string("task", task_name(c.task)));
  c.seed = static_cast<std::uint64_t>(r.get_index("seed", static_cast<Index>(c.seed)));
  // row normalization is on by default only where dot-product scores need it
  c.l2_normalize_output =
      r.get_bool("l2_normalize_output", c.task == Task::link_prediction);
  c.validate();
  return c;
}

inline std::string cascade_config_text(const CascadeConfig& c) {
  std::ostringstream os;
  os << "blocks = " << c.blocks << "\n";
  os << "layers = " << c.layers << "\n";
  os << "dim_layers = " << c.dim_layers << "\n";
  os << "hidden = " << c.hidden << "\n";
  os << "heads = " << c.heads << "\n";
  os << "dim_heads = " << c.dim_heads << "\n";
  os << "beta = " << format_g17(c.beta) << "\n";
  os << "edge_table_dim = " << c.edge_table_dim << "\n";
  os << "edge_proj_dim = " << c.edge_proj_dim << "\n";
  os << "token_width = " << c.token_width << "\n";
  os << "dim_qk = " << c.dim_qk << "\n";
  os << "dim_value = " << c.dim_value << "\n";
  os << "dropout_hidden = " << format_g17(c.dropout_hidden) << "\n";
  os << "dropout_attn = " << format_g17(c.dropout_attn) << "\n";
  os << "ffn_in_dim_encoder = " << (c.ffn_in_dim_encoder ? 1 : 0) << "\n";
  os << "residual_ln_in_dim_encoder = " << (c.residual_ln_in_dim_encoder ? 1 : 0) << "\n";
  os << "share_type_table = " << (c.share_type_table ? 1 : 0) << "\n";
  os << "l2_normalize_output = " << (c.l2_normalize_output ? 1 : 0) << "\n";
  os << "symmetrize_edges = " << (c.symmetrize_edges ? 1 : 0) << "\n";
  os << "feature_fallback = " << c.feature_fallback << "\n";
  os << "task = " << task_name(c.task) << "\n";
  os << "seed = " << c.seed << "\n";
  return os.str();
}

struct RunConfig {
  CascadeConfig model;
  double lr = 0.01;
  double weight_decay = 0.0;
  Index max_epochs = 500;
  Index patience = 30;
  Index eval_every = 1;
  std::string metric;  // empty = task default (micro_f1 / roc_auc)
  std::vector<Index> seeds = {1, 2, 3, 4, 5};
  std::string dataset_dir;
  std::string synth_spec;
  std::string out_dir;
  std::string ablation = "full";
  // node-label split used when the dataset ships no split.tsv
  double train_ratio = 0.6, val_ratio = 0.2, test_ratio = 0.2;
  // link task: fraction of edges held out as evaluation positives
  double val_edge_ratio = 0.1, test_edge_ratio = 0.2;
  Index mrr_negatives = 20;  // ranking pool size per held-out edge

  std::string resolved_metric() const {
    if (!metric.empty()) return metric;
    return model.task == Task::node_classification ? "micro_f1" : "roc_auc";
  }

  void validate() const {
    model.validate();
    if (lr < 0.0 || weight_decay < 0.0)
      throw ConfigError("lr and weight_decay must be non-negative");
    if (max_epochs <= 0 || patience <= 0 || eval_every <= 0)
      throw ConfigError("max_epochs, patience and eval_every must be positive");
    if (seeds.empty()) throw ConfigError("at least one seed is required");
    std::unordered_set<Index> seen;
    for (Index s : seeds)
      if (!seen.insert(s).second)
        throw ConfigError("duplicate seed " + std::to_string(s));
    if (!dataset_dir.empty() && !synth_spec.empty())
      throw ConfigError("dataset_dir and synth_spec are mutually exclusive");
    if (train_ratio <= 0.0 || val_ratio <= 0.0 || test_ratio <= 0.0)
      throw ConfigError("split ratios must be positive");
    if (val_edge_ratio <= 0.0 || test_edge_ratio <= 0.0 ||
        val_edge_ratio + test_edge_ratio >= 1.0)
      throw ConfigError("edge holdout ratios must be positive and sum below 1");
    if (mrr_negatives <= 0) throw ConfigError("mrr_negatives must be positive");
    const std::string m = resolved_metric();
    if (model.task == Task::node_classification) {
      if (m != "micro_f1" && m != "macro_f1" && m != "accuracy")
        throw ConfigError("metric '" + m + "' not valid for node classification");
    } else if (m != "roc_auc" && m != "mrr") {
      throw ConfigError("metric '" + m + "' not valid for link prediction");
    }
  }

  static RunConfig from_kv(KvReader& r) {
    RunConfig c;
    c.model = read_cascade_config(r);
    c.lr = r.get_double("lr", c.lr);
    c.weight_decay = r.get_double("weight_decay", c.weight_decay);
    c.max_epochs = r.get_index("max_epochs", c.max_epochs);
    c.patience = r.get_index("patience", c.patience);
    c.eval_every = r.get_index("eval_every", c.eval_every);
    c.metric = r.get_string("metric", c.metric);
    c.seeds = r.get_index_list("seeds", c.seeds);
    c.dataset_dir = r.get_string("dataset_dir", c.dataset_dir);
    c.synth_spec = r.get_string("synth_spec", c.synth_spec);
    c.out_dir = r.get_string("out_dir", c.out_dir);
    c.ablation = r.get_string("ablation", c.ablation);
    parse_variant(c.ablation);  // fail fast on bad names
    c.train_ratio = r.get_double("train_ratio", c.train_ratio);
    c.val_ratio = r.get_double("val_ratio", c.val_ratio);
    c.test_ratio = r.get_double("test_ratio", c.test_ratio);
    c.val_edge_ratio = r.get_double("val_edge_ratio", c.val_edge_ratio);
    c.test_edge_ratio = r.get_double("test_edge_ratio", c.test_edge_ratio);
    c.mrr_negatives = r.get_index("mrr_negatives", c.mrr_negatives);
    c.validate();
    return c;
  }

  static RunConfig from_file(const std::string& path) {
    const KvFile kv = KvFile::parse(path);
    KvReader r(kv);
    RunConfig c = from_kv(r);
    r.reject_unknown(path);
    return c;
  }
};

}  // namespace hetcan
