// Command-line front end: train / eval / gradcheck / synth.
//
// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
// failure. Parse errors from the CLI itself count as configuration errors.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hetcan/experiment.hpp"
#include "hetcan/gradcheck.hpp"

using namespace hetcan;

namespace {

struct TrainArgs {
  std::string config;
  std::string dataset_dir;
  std::string synth_spec;
  std::string task;
  std::string ablate;
  std::string seeds;
  std::string out;
};

std::vector<Index> parse_seed_list(const std::string& text) {
  std::vector<Index> seeds;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) {
        try {
          seeds.push_back(static_cast<Index>(std::stoll(cur)));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + cur + "' in --seeds");
        }
        cur.clear();
      }
    } else {
      cur += ch;
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds needs at least one value");
  return seeds;
}

RunConfig load_run_config(const TrainArgs& a) {
  RunConfig cfg = RunConfig::from_file(a.config);
  if (!a.dataset_dir.empty()) {
    cfg.dataset_dir = a.dataset_dir;
    cfg.synth_spec.clear();
  }
  if (!a.synth_spec.empty()) {
    cfg.synth_spec = a.synth_spec;
    cfg.dataset_dir.clear();
  }
  if (!a.task.empty()) cfg.model.task = parse_task(a.task);
  if (!a.ablate.empty()) {
    parse_variant(a.ablate);
    cfg.ablation = a.ablate;
  }
  if (!a.seeds.empty()) cfg.seeds = parse_seed_list(a.seeds);
  if (!a.out.empty()) cfg.out_dir = a.out;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  const RunConfig cfg = load_run_config(a);
  const MetricsReport rep = run_experiment(cfg);
  for (const auto& r : rep.runs) {
    if (!r.completed) {
      std::cout << "seed " << r.seed << ": FAILED (" << r.error << ")\n";
      continue;
    }
    std::cout << "seed " << r.seed << ": best epoch " << r.best_epoch << ", val "
              << rep.metric << " " << r.best_val;
    for (const auto& [name, value] : r.test) std::cout << ", test " << name << " " << value;
    std::cout << "\n";
  }
  for (const auto& [name, m] : rep.mean_of)
    std::cout << name << ": mean " << m << " std " << rep.std_of.at(name) << "\n";
  if (!cfg.out_dir.empty()) std::cout << "outputs written to " << cfg.out_dir << "\n";
  if (rep.complete) return 0;
  for (const auto& r : rep.runs)
    if (!r.completed)
      return r.error_kind == "numeric" ? 3 : r.error_kind == "config" ? 1 : 2;
  return 2;
}

int run_eval(const std::string& ckpt_path, const std::string& dataset_dir) {
  const ModelState st = load_model(ckpt_path);
  RunConfig cfg;
  cfg.model = st.cfg;
  cfg.dataset_dir = dataset_dir;

  if (st.cfg.task == Task::node_classification) {
    LoadOptions opts;
    opts.symmetrize = st.cfg.symmetrize_edges;
    opts.feature_fallback = st.cfg.feature_fallback;
    HeteroGraph g = add_self_loops(load_dataset_dir(dataset_dir, opts));
    const Wiring wiring = make_wiring(g);
    GradientTape tape(false);
    Rng rng(0);
    const ModelOutput out = model_forward(tape, g, wiring, st, {}, rng);
    const Tensor logits = classify_head(tape, out.h, st);
    const auto metrics = detail_exp::node_metrics(logits, g, g.labeled_nodes());
    for (const auto& [name, value] : metrics) std::cout << name << " = " << value << "\n";
    return 0;
  }

  // Link checkpoints are scored on a fresh seeded holdout of the dataset's
  // edges, rebuilt with the same splitter the trainer uses.
  const PreparedRun data = prepare_run(cfg, static_cast<Index>(st.cfg.seed));
  const Tensor h = detail_exp::eval_forward(data, st);
  std::cout << "roc_auc = " << detail_exp::link_auc(h, data.test_pos, data.test_neg) << "\n";
  std::cout << "mrr = " << detail_exp::link_mrr(h, data.test_pos, data.test_rank) << "\n";
  return 0;
}

int run_gradcheck(const std::string& config_path) {
  const RunConfig cfg = RunConfig::from_file(config_path);
  const Index seed = cfg.seeds.front();
  const PreparedRun data = prepare_run(cfg, seed);
  ModelState st = build_model(cfg.model, GraphDims::of(data.g),
                              detail_exp::derive_seed(cfg.model.seed,
                                                      static_cast<std::uint64_t>(seed), 3),
                              parse_variant(cfg.ablation));

  GradCheckResult res;
  if (cfg.model.task == Task::node_classification) {
    const auto labels = data.g.single_labels();
    const auto rows = data.g.labeled_nodes();
    res = grad_check(
        [&](GradientTape& t) {
          Rng rng(0);
          const ModelOutput out = model_forward(t, data.g, data.wiring, st, {}, rng);
          return t.softmax_cross_entropy(classify_head(t, out.h, st), labels, rows);
        },
        st.trainable);
  } else {
    EdgeBatch pos = data.train_pos;
    Rng neg_rng(7);
    const EdgeBatch neg = sample_negatives(pos, data.g, data.avoid, neg_rng);
    res = grad_check(
        [&](GradientTape& t) {
          Rng rng(0);
          const ModelOutput out = model_forward(t, data.g, data.wiring, st, {}, rng);
          return link_loss(t, out.h, pos, neg);
        },
        st.trainable);
  }

  std::printf("checked %zu coordinates, max relative error %.3e (param %lld coord %lld: "
              "analytic %.9e vs numeric %.9e)\n",
              res.coords_checked, res.max_rel_error, static_cast<long long>(res.worst_param),
              static_cast<long long>(res.worst_coord), res.analytic, res.numeric);
  if (res.max_rel_error < 1e-4) {
    std::cout << "gradcheck PASS\n";
    return 0;
  }
  std::cout << "gradcheck FAIL\n";
  return 3;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  const SynthSpec spec = SynthSpec::from_file(spec_path);
  const HeteroGraph g = synth_generate(spec);
  write_graph(g, out_dir);
  std::cout << "wrote " << g.n << " nodes / " << g.num_edges() << " edges to " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"heterogeneous-graph cascade attention network"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "train a model over one or more seeds");
  train->add_option("--config", targs.config, "run configuration file")->required();
  train->add_option("--dataset-dir", targs.dataset_dir, "dataset directory (TSV files)");
  train->add_option("--synth", targs.synth_spec, "synthetic-graph spec file");
  train->add_option("--task", targs.task, "node | link");
  train->add_option("--ablate", targs.ablate, "full | no_type | no_dim");
  train->add_option("--seeds", targs.seeds, "comma-separated seed list");
  train->add_option("--out", targs.out, "output directory");

  std::string ckpt, eval_dir;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval->add_option("--dataset-dir", eval_dir, "dataset directory")->required();

  std::string gc_config;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--config", gc_config, "run configuration file")->required();

  std::string synth_spec_path, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", synth_spec_path, "generator spec file")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (train->parsed()) return run_train(targs);
    if (eval->parsed()) return run_eval(ckpt, eval_dir);
    if (gradcheck->parsed()) return run_gradcheck(gc_config);
    return run_synth(synth_spec_path, synth_out);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
