#pragma once
// Experiment orchestration: per-seed pipelines (build graph, split, train with
// early stopping, evaluate the test split at the best-validation snapshot) and
// the machine-readable outputs report.json / run_<seed>.jsonl / summary.csv.
//
// report.json deliberately omits wall-clock timings so that repeated runs with
// the same config and seeds produce byte-identical files; per-epoch seconds
// live only in the JSON-lines logs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "hetcan/cascade.hpp"
#include "hetcan/config.hpp"
#include "hetcan/graph_io.hpp"
#include "hetcan/metrics.hpp"
#include "hetcan/model_io.hpp"
#include "hetcan/synth.hpp"

namespace hetcan {

struct EpochLog {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double seconds = 0.0;  // train_step only: forward + backward + update
};

struct RunResult {
  Index seed = 0;
  bool completed = false;
  std::string error;
  std::string error_kind;  // config | data | numeric, for exit-code mapping
  Index best_epoch = -1;
  double best_val = 0.0;
  double max_train_accuracy = 0.0;     // over the whole trajectory (node task)
  std::map<std::string, double> test;  // metric name -> value at best snapshot
  std::vector<EpochLog> epochs;
};

struct MetricsReport {
  std::string task;
  std::string metric;
  std::string ablation;
  bool complete = false;
  std::vector<RunResult> runs;
  // aggregated over exactly the completed runs
  std::map<std::string, double> mean_of, std_of;
};

namespace detail_exp {

// Distinct streams (graph build, splits, init, training, eval negatives) get
// distinct seeds derived from the run seed, so adding a consumer to one stream
// never shifts the draws of another.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t run, std::uint64_t salt) {
  std::uint64_t x = base + 0x9E3779B97F4A7C15ull * (run + 1) + salt;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail_exp

// Everything one training run needs, assembled once per seed.
struct PreparedRun {
  HeteroGraph g;  // forward-pass graph (symmetrized if configured, self-loops added)
  Wiring wiring;
  Splits node_splits;  // node task
  // link task: held-out positives with negatives fixed at split time
  EdgeBatch train_pos;
  EdgeBatch val_pos, val_neg, test_pos, test_neg;
  std::vector<std::vector<Index>> val_rank, test_rank;  // negative dsts per positive
  std::unordered_set<std::int64_t> avoid;               // edges never used as negatives
};

namespace detail_exp {

inline HeteroGraph base_graph(const RunConfig& cfg, Index seed) {
  if (!cfg.synth_spec.empty()) {
    SynthSpec spec = SynthSpec::from_file(cfg.synth_spec);
    // each run generates its own graph; the file's seed acts as a base offset
    spec.seed = derive_seed(spec.seed, static_cast<std::uint64_t>(seed), 1);
    return synth_generate(spec);
  }
  if (cfg.dataset_dir.empty()) throw ConfigError("no dataset_dir or synth_spec given");
  LoadOptions o;
  o.symmetrize = false;  // symmetrization happens after edge splitting
  o.feature_fallback = cfg.model.feature_fallback;
  return load_dataset_dir(cfg.dataset_dir, o);
}

inline std::vector<std::vector<Index>> rank_negatives(const EdgeBatch& pos, Index per_positive,
                                                      const HeteroGraph& g,
                                                      const std::unordered_set<std::int64_t>& avoid,
                                                      Rng& rng) {
  EdgeBatch repeated;
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (Index k = 0; k < per_positive; ++k) {
      repeated.src.push_back(pos.src[i]);
      repeated.dst.push_back(pos.dst[i]);
    }
  const EdgeBatch neg = sample_negatives(repeated, g, avoid, rng);
  std::vector<std::vector<Index>> groups(pos.size());
  std::size_t at = 0;
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (Index k = 0; k < per_positive; ++k) groups[i].push_back(neg.dst[at++]);
  return groups;
}

}  // namespace detail_exp

inline PreparedRun prepare_run(const RunConfig& cfg, Index seed) {
  using detail_exp::derive_seed;
  PreparedRun out;
  HeteroGraph base = detail_exp::base_graph(cfg, seed);

  if (cfg.model.task == Task::node_classification) {
    if (cfg.model.symmetrize_edges) base = symmetrize(base);
    out.g = add_self_loops(base);
    out.wiring = make_wiring(out.g);
    out.node_splits = split_nodes(out.g, cfg.train_ratio, cfg.val_ratio, cfg.test_ratio,
                                  derive_seed(0, static_cast<std::uint64_t>(seed), 2));
    return out;
  }

  // Link task: hold out edges first, then build the message graph from the
  // remaining ones so evaluation positives are never seen during the forward
  // pass. Negatives for val/test are drawn once here, giving every epoch (and
  // every rerun) the same evaluation sets.
  const Index e = base.num_edges();
  std::vector<Index> order(static_cast<std::size_t>(e));
  for (Index i = 0; i < e; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng split_rng(derive_seed(0, static_cast<std::uint64_t>(seed), 2));
  split_rng.shuffle(order);

  const auto n_val = std::max<Index>(
      1, static_cast<Index>(std::llround(cfg.val_edge_ratio * static_cast<double>(e))));
  const auto n_test = std::max<Index>(
      1, static_cast<Index>(std::llround(cfg.test_edge_ratio * static_cast<double>(e))));
  if (n_val + n_test >= e)
    throw DataError("link split leaves no training edges (" + std::to_string(e) + " total)");

  auto take = [&](Index from, Index count, EdgeBatch& into) {
    for (Index i = from; i < from + count; ++i) {
      const Index idx = order[static_cast<std::size_t>(i)];
      into.src.push_back(base.src[static_cast<std::size_t>(idx)]);
      into.dst.push_back(base.dst[static_cast<std::size_t>(idx)]);
    }
  };
  take(0, n_val, out.val_pos);
  take(n_val, n_test, out.test_pos);
  take(n_val + n_test, e - n_val - n_test, out.train_pos);

  HeteroGraph message = base;
  message.src.clear();
  message.dst.clear();
  message.edge_type.clear();
  for (Index i = n_val + n_test; i < e; ++i) {
    const Index idx = order[static_cast<std::size_t>(i)];
    message.src.push_back(base.src[static_cast<std::size_t>(idx)]);
    message.dst.push_back(base.dst[static_cast<std::size_t>(idx)]);
    message.edge_type.push_back(base.edge_type[static_cast<std::size_t>(idx)]);
  }
  message.finalize();
  if (cfg.model.symmetrize_edges) message = symmetrize(message);
  out.g = add_self_loops(message);
  out.wiring = make_wiring(out.g);

  // a sampled "negative" must be a non-edge in either direction
  for (Index i = 0; i < e; ++i) {
    out.avoid.insert(base.src[static_cast<std::size_t>(i)] * base.n +
                     base.dst[static_cast<std::size_t>(i)]);
    out.avoid.insert(base.dst[static_cast<std::size_t>(i)] * base.n +
                     base.src[static_cast<std::size_t>(i)]);
  }

  Rng eval_rng(derive_seed(0, static_cast<std::uint64_t>(seed), 5));
  out.val_neg = sample_negatives(out.val_pos, out.g, out.avoid, eval_rng);
  out.test_neg = sample_negatives(out.test_pos, out.g, out.avoid, eval_rng);
  out.val_rank = detail_exp::rank_negatives(out.val_pos, cfg.mrr_negatives, out.g, out.avoid,
                                            eval_rng);
  out.test_rank = detail_exp::rank_negatives(out.test_pos, cfg.mrr_negatives, out.g, out.avoid,
                                             eval_rng);
  return out;
}

namespace detail_exp {

inline double dot_rows(const Tensor& h, Index a, Index b) {
  double s = 0.0;
  for (Index j = 0; j < h.cols(); ++j) s += h.at(a, j) * h.at(b, j);
  return s;
}

inline std::vector<double> batch_scores(const Tensor& h, const EdgeBatch& b) {
  std::vector<double> s(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) s[i] = dot_rows(h, b.src[i], b.dst[i]);
  return s;
}

inline double link_auc(const Tensor& h, const EdgeBatch& pos, const EdgeBatch& neg) {
  std::vector<double> scores = batch_scores(h, pos);
  std::vector<int> labels(pos.size(), 1);
  for (double s : batch_scores(h, neg)) {
    scores.push_back(s);
    labels.push_back(0);
  }
  return roc_auc(scores, labels);
}

inline double link_mrr(const Tensor& h, const EdgeBatch& pos,
                       const std::vector<std::vector<Index>>& rank) {
  std::vector<RankGroup> groups(pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    groups[i].positive_index = 0;
    groups[i].scores.push_back(dot_rows(h, pos.src[i], pos.dst[i]));
    for (Index d : rank[i]) groups[i].scores.push_back(dot_rows(h, pos.src[i], d));
  }
  return mrr(groups);
}

// Test-split metrics for a node model: argmax predictions for single-label
// graphs, per-class 0.5 thresholding for multilabel ones (accuracy is then
// exact-match).
inline std::map<std::string, double> node_metrics(const Tensor& logits, const HeteroGraph& g,
                                                  const std::vector<Index>& nodes) {
  std::map<std::string, double> m;
  if (is_multilabel(g)) {
    std::vector<std::vector<char>> pred, truth;
    Index exact = 0;
    for (Index v : nodes) {
      std::vector<char> p(static_cast<std::size_t>(g.num_classes), 0);
      std::vector<char> t(static_cast<std::size_t>(g.num_classes), 0);
      for (Index c = 0; c < g.num_classes; ++c)
        p[static_cast<std::size_t>(c)] = logits.at(v, c) > 0.0 ? 1 : 0;  // sigmoid > 0.5
      for (int32_t c : g.labels[static_cast<std::size_t>(v)]) t[static_cast<std::size_t>(c)] = 1;
      if (p == t) ++exact;
      pred.push_back(std::move(p));
      truth.push_back(std::move(t));
    }
    const F1Pair f1 = multilabel_f1(pred, truth, g.num_classes);
    m["micro_f1"] = f1.micro;
    m["macro_f1"] = f1.macro;
    m["accuracy"] = static_cast<double>(exact) / static_cast<double>(nodes.size());
    return m;
  }
  std::vector<int32_t> pred, truth;
  for (Index v : nodes) {
    Index best = 0;
    for (Index c = 1; c < g.num_classes; ++c)
      if (logits.at(v, c) > logits.at(v, best)) best = c;
    pred.push_back(static_cast<int32_t>(best));
    truth.push_back(g.labels[static_cast<std::size_t>(v)][0]);
  }
  const F1Pair f1 = micro_macro_f1(pred, truth, g.num_classes);
  m["micro_f1"] = f1.micro;
  m["macro_f1"] = f1.macro;
  m["accuracy"] = accuracy(pred, truth);
  return m;
}

inline Tensor eval_forward(const PreparedRun& data, const ModelState& st) {
  GradientTape tape(false);
  Rng rng(0);  // dropout is off outside training, so this is never consumed
  return model_forward(tape, data.g, data.wiring, st, {}, rng).h;
}

}  // namespace detail_exp

// Trains one seed to completion and reports test metrics at the snapshot with
// the best validation metric (higher is always better for the metrics here).
// When `keep_model` is given it receives the best-validation model.
inline RunResult run_one_seed(const RunConfig& cfg, Index seed, ModelState* keep_model = nullptr) {
  using namespace detail_exp;
  RunResult res;
  res.seed = seed;

  const PreparedRun data = prepare_run(cfg, seed);
  const Variant variant = parse_variant(cfg.ablation);
  ModelState st = build_model(cfg.model, GraphDims::of(data.g),
                              derive_seed(cfg.model.seed, static_cast<std::uint64_t>(seed), 3),
                              variant);

  AdamOptions opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  Rng train_rng(derive_seed(cfg.model.seed, static_cast<std::uint64_t>(seed), 4));
  const std::string metric = cfg.resolved_metric();
  const bool node_task = cfg.model.task == Task::node_classification;

  TrainBatch batch;
  if (node_task) {
    batch.nodes = data.node_splits.train;
    if (batch.nodes.empty()) throw DataError("empty training split");
  } else {
    batch.pos = data.train_pos;
  }

  // one forward pass per evaluation serves both the stopping metric and the
  // train-fit diagnostic
  auto validate_now = [&]() {
    const Tensor h = eval_forward(data, st);
    if (node_task) {
      GradientTape t(false);
      const Tensor logits = classify_head(t, h, st);
      res.max_train_accuracy =
          std::max(res.max_train_accuracy,
                   node_metrics(logits, data.g, data.node_splits.train).at("accuracy"));
      return node_metrics(logits, data.g, data.node_splits.valid).at(metric);
    }
    return metric == "mrr" ? link_mrr(h, data.val_pos, data.val_rank)
                           : link_auc(h, data.val_pos, data.val_neg);
  };

  std::vector<std::vector<double>> best_params;
  double last_val = 0.0;
  bool evaluated_once = false;

  for (Index epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (!node_task)
      batch.neg = sample_negatives(batch.pos, data.g, data.avoid, train_rng);

    const auto t0 = std::chrono::steady_clock::now();
    const double loss = train_step(data.g, data.wiring, st, batch, opt, train_rng);
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;

    const bool eval_now =
        epoch == 1 || epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
    if (eval_now) {
      last_val = validate_now();
      if (!evaluated_once || last_val > res.best_val) {
        res.best_val = last_val;
        res.best_epoch = epoch;
        best_params.clear();
        for (const auto& p : st.trainable) best_params.push_back(p.values());
      }
      evaluated_once = true;
    }
    res.epochs.push_back({epoch, loss, last_val, dt.count()});
    if (epoch - res.best_epoch >= cfg.patience) break;
  }

  for (std::size_t i = 0; i < st.trainable.size(); ++i)
    st.trainable[i].values() = best_params[i];
  st.epoch = res.best_epoch;

  const Tensor h = eval_forward(data, st);
  if (node_task) {
    GradientTape t(false);
    const Tensor logits = classify_head(t, h, st);
    res.test = node_metrics(logits, data.g, data.node_splits.test);
    res.test["train_accuracy"] =
        node_metrics(logits, data.g, data.node_splits.train).at("accuracy");
  } else {
    res.test["roc_auc"] = link_auc(h, data.test_pos, data.test_neg);
    res.test["mrr"] = link_mrr(h, data.test_pos, data.test_rank);
  }
  res.completed = true;
  if (keep_model) *keep_model = st;
  return res;
}

namespace detail_exp {

inline void aggregate(MetricsReport& rep) {
  std::vector<const RunResult*> done;
  for (const auto& r : rep.runs)
    if (r.completed) done.push_back(&r);
  rep.complete = done.size() == rep.runs.size() && !rep.runs.empty();
  if (done.empty()) return;
  for (const auto& [name, unused] : done.front()->test) {
    (void)unused;
    std::vector<double> xs;
    for (const RunResult* r : done) xs.push_back(r->test.at(name));
    rep.mean_of[name] = mean(xs);
    rep.std_of[name] = stddev(xs);
  }
}

inline nlohmann::json report_json(const RunConfig& cfg, const MetricsReport& rep) {
  nlohmann::json j;
  j["task"] = rep.task;
  j["metric"] = rep.metric;
  j["ablation"] = rep.ablation;
  j["complete"] = rep.complete;
  j["config"] = {{"lr", cfg.lr},
                 {"weight_decay", cfg.weight_decay},
                 {"max_epochs", cfg.max_epochs},
                 {"patience", cfg.patience},
                 {"eval_every", cfg.eval_every},
                 {"hidden", cfg.model.hidden},
                 {"blocks", cfg.model.blocks},
                 {"layers", cfg.model.layers},
                 {"dim_layers", cfg.model.dim_layers},
                 {"heads", cfg.model.heads},
                 {"dim_heads", cfg.model.dim_heads},
                 {"beta", cfg.model.beta},
                 {"seeds", cfg.seeds}};
  j["runs"] = nlohmann::json::array();
  for (const auto& r : rep.runs) {
    nlohmann::json run;
    run["seed"] = r.seed;
    run["completed"] = r.completed;
    run["best_epoch"] = r.best_epoch;
    run["best_val"] = r.best_val;
    run["max_train_accuracy"] = r.max_train_accuracy;
    run["epochs_trained"] = r.epochs.size();
    run["test"] = r.test;
    if (!r.error.empty()) run["error"] = r.error;
    j["runs"].push_back(run);
  }
  j["aggregate"]["mean"] = rep.mean_of;
  j["aggregate"]["std"] = rep.std_of;
  return j;
}

inline void write_outputs(const RunConfig& cfg, const MetricsReport& rep) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  {
    std::ofstream out(fs::path(cfg.out_dir) / "report.json");
    out << report_json(cfg, rep).dump(2) << "\n";
  }

  for (const auto& r : rep.runs) {
    std::ofstream out(fs::path(cfg.out_dir) /
                      ("run_" + std::to_string(r.seed) + ".jsonl"));
    for (const auto& e : r.epochs) {
      nlohmann::json line;
      line["epoch"] = e.epoch;
      line["train_loss"] = e.train_loss;
      line["val_metric"] = e.val_metric;
      line["seconds"] = e.seconds;
      out << line.dump() << "\n";
    }
  }

  {
    std::ofstream out(fs::path(cfg.out_dir) / "summary.csv");
    std::vector<std::string> cols;
    for (const auto& [name, unused] : rep.mean_of) {
      (void)unused;
      cols.push_back(name);
    }
    out << "seed,completed,best_epoch";
    for (const auto& c : cols) out << "," << c;
    out << "\n";
    for (const auto& r : rep.runs) {
      out << r.seed << "," << (r.completed ? 1 : 0) << "," << r.best_epoch;
      for (const auto& c : cols) {
        auto it = r.test.find(c);
        out << ",";
        if (it != r.test.end()) out << format_g17(it->second);
      }
      out << "\n";
    }
    out << "mean,,";
    for (const auto& c : cols) out << "," << format_g17(rep.mean_of.at(c));
    out << "\nstd,,";
    for (const auto& c : cols) out << "," << format_g17(rep.std_of.at(c));
    out << "\n";
  }
}

}  // namespace detail_exp

// Runs every seed in the config (sequentially: identical results regardless of
// scheduling), aggregates over the completed ones, and writes the output files
// when an output directory is set. A run that throws is recorded with its
// error text and leaves the report flagged incomplete instead of aborting the
// remaining seeds.
inline MetricsReport run_experiment(const RunConfig& cfg) {
  cfg.validate();
  MetricsReport rep;
  rep.task = task_name(cfg.model.task);
  rep.metric = cfg.resolved_metric();
  rep.ablation = cfg.ablation;

  for (Index seed : cfg.seeds) {
    try {
      ModelState model;
      rep.runs.push_back(run_one_seed(cfg, seed, &model));
      if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        save_model((std::filesystem::path(cfg.out_dir) /
                    ("ckpt_" + std::to_string(seed) + ".bin"))
                       .string(),
                   model);
      }
    } catch (const Error& e) {
      RunResult failed;
      failed.seed = seed;
      failed.error = e.what();
      failed.error_kind = dynamic_cast<const NumericError*>(&e)  ? "numeric"
                          : dynamic_cast<const ConfigError*>(&e) ? "config"
                                                                 : "data";
      rep.runs.push_back(std::move(failed));
    }
  }
  detail_exp::aggregate(rep);
  if (!cfg.out_dir.empty()) detail_exp::write_outputs(cfg, rep);
  return rep;
}

inline MetricsReport ablate(RunConfig cfg, Variant variant) {
  cfg.ablation = variant_name(variant);
  return run_experiment(cfg);
}

}  // namespace hetcan
