#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hetcan/graph.hpp"
#include "hetcan/kv_file.hpp"
#include "hetcan/rng.hpp"

namespace hetcan {

// Generator for small typed graphs with planted, tunable structure:
//   - every node gets a hidden class; nodes of the target type expose it as
//     their label;
//   - class c shifts the feature mean along a class-specific block of
//     dimensions (separation scaled by `signal`);
//   - `type_signal` flips that mean on odd node types, so recovering the
//     class from a mixed neighborhood requires type-conditioned sign
//     handling;
//   - `dim_signal` inflates the noise variance on the class's own dimension
//     block — a zero-mean cue invisible to a purely linear readout;
//   - wiring is homophilous: with probability `homophily` an edge connects
//     same-class endpoints.
//
// mode "mixed": node types are wired in a ring (type t -> type (t+1) mod A),
// labels on type 0. mode "bipartite": exactly two node types, edges from
// type 0 to type 1 only, no labels (link-prediction data).
struct SynthSpec {
  std::string mode = "mixed";
  Index num_node_types = 3;
  std::vector<Index> nodes_per_type;  // empty -> equal sizes from total 200
  Index num_edge_types = 2;
  Index num_classes = 3;
  std::vector<Index> feat_dim;  // per type; empty -> 12 everywhere
  double signal = 1.0;
  double type_signal = 0.0;
  double dim_signal = 0.0;
  double homophily = 0.8;
  double avg_degree = 4.0;
  bool featureless = false;
  std::uint64_t seed = 1;

  void validate() const {
    if (mode != "mixed" && mode != "bipartite")
      throw ConfigError("synth: mode must be mixed or bipartite, got '" + mode + "'");
    if (num_node_types <= 0 || num_classes <= 0 || num_edge_types <= 0)
      throw ConfigError("synth: counts must be positive");
    if (mode == "bipartite" && num_node_types != 2)
      throw ConfigError("synth: bipartite mode needs exactly 2 node types");
    if (signal < 0.0 || signal > 1.0)
      throw ConfigError("synth: signal must lie in [0,1]");
    if (type_signal < 0.0 || type_signal > 1.0)
      throw ConfigError("synth: type_signal must lie in [0,1]");
    if (dim_signal < 0.0) throw ConfigError("synth: dim_signal must be >= 0");
    if (homophily < 0.0 || homophily > 1.0)
      throw ConfigError("synth: homophily must lie in [0,1]");
    if (avg_degree <= 0.0) throw ConfigError("synth: avg_degree must be positive");
    if (!nodes_per_type.empty() &&
        static_cast<Index>(nodes_per_type.size()) != num_node_types)
      throw ConfigError("synth: nodes_per_type needs one entry per node type");
    for (Index c : nodes_per_type)
      if (c <= 0) throw ConfigError("synth: nodes_per_type entries must be positive");
    if (!feat_dim.empty() && static_cast<Index>(feat_dim.size()) != num_node_types)
      throw ConfigError("synth: feat_dim needs one entry per node type");
    for (Index d : feat_dim)
      if (d <= 0) throw ConfigError("synth: feat_dim entries must be positive");
  }

  std::vector<Index> resolved_counts() const {
    if (!nodes_per_type.empty()) return nodes_per_type;
    const Index per = std::max<Index>(1, 200 / num_node_types);
    return std::vector<Index>(static_cast<std::size_t>(num_node_types), per);
  }

  std::vector<Index> resolved_dims() const {
    if (!feat_dim.empty()) return feat_dim;
    return std::vector<Index>(static_cast<std::size_t>(num_node_types), 12);
  }

  static SynthSpec from_file(const std::string& path) {
    const KvFile kv = KvFile::parse(path);
    KvReader r(kv);
    SynthSpec s;
    s.mode = r.get_string("mode", s.mode);
    s.num_node_types = r.get_index("num_node_types", s.num_node_types);
    s.nodes_per_type = r.get_index_list("nodes_per_type", s.nodes_per_type);
    s.num_edge_types = r.get_index("num_edge_types", s.num_edge_types);
    s.num_classes = r.get_index("num_classes", s.num_classes);
    s.feat_dim = r.get_index_list("feat_dim", s.feat_dim);
    s.signal = r.get_double("signal", s.signal);
    s.type_signal = r.get_double("type_signal", s.type_signal);
    s.dim_signal = r.get_double("dim_signal", s.dim_signal);
    s.homophily = r.get_double("homophily", s.homophily);
    s.avg_degree = r.get_double("avg_degree", s.avg_degree);
    s.featureless = r.get_bool("featureless", s.featureless);
    s.seed = static_cast<std::uint64_t>(r.get_index("seed", static_cast<Index>(s.seed)));
    r.reject_unknown(path);
    s.validate();
    return s;
  }
};

namespace detail {

// Class mean direction: unit mass on a contiguous (wrapping) block of
// dimensions, so distinct classes are exactly orthogonal when d >= C*k.
inline std::vector<double> class_pattern(Index cls, Index dim, Index num_classes) {
  const Index k = std::max<Index>(1, dim / num_classes);
  std::vector<double> p(static_cast<std::size_t>(dim), 0.0);
  const double v = 1.0 / std::sqrt(static_cast<double>(k));
  for (Index j = 0; j < k; ++j) p[static_cast<std::size_t>((cls * k + j) % dim)] = v;
  return p;
}

}  // namespace detail

inline HeteroGraph synth_generate(const SynthSpec& spec) {
  spec.validate();
  const std::vector<Index> counts = spec.resolved_counts();
  const std::vector<Index> dims = spec.resolved_dims();
  const Index a = spec.num_node_types;
  const Index c_num = spec.num_classes;

  HeteroGraph g;
  g.num_node_types = a;
  g.num_edge_types = spec.num_edge_types;
  for (Index t = 0; t < a; ++t) g.n += counts[static_cast<std::size_t>(t)];
  g.node_type.resize(static_cast<std::size_t>(g.n));
  {
    Index v = 0;
    for (Index t = 0; t < a; ++t)
      for (Index i = 0; i < counts[static_cast<std::size_t>(t)]; ++i)
        g.node_type[static_cast<std::size_t>(v++)] = static_cast<int32_t>(t);
  }

  Rng rng(spec.seed);

  std::vector<int32_t> cls(static_cast<std::size_t>(g.n));
  for (Index v = 0; v < g.n; ++v) cls[static_cast<std::size_t>(v)] =
      static_cast<int32_t>(rng.below(static_cast<std::uint64_t>(c_num)));

  // per-class node lists per type, for homophilous target sampling
  std::vector<std::vector<std::vector<Index>>> members(
      static_cast<std::size_t>(a),
      std::vector<std::vector<Index>>(static_cast<std::size_t>(c_num)));
  {
    Index v = 0;
    for (Index t = 0; t < a; ++t)
      for (Index i = 0; i < counts[static_cast<std::size_t>(t)]; ++i, ++v)
        members[static_cast<std::size_t>(t)][static_cast<std::size_t>(cls[v])].push_back(v);
  }

  // features
  g.feat_dim.assign(static_cast<std::size_t>(a), 0);
  g.features.assign(static_cast<std::size_t>(a), Tensor());
  if (!spec.featureless) {
    const double separation = 4.0 * spec.signal;
    for (Index t = 0; t < a; ++t) {
      const Index d = dims[static_cast<std::size_t>(t)];
      const Index cnt = counts[static_cast<std::size_t>(t)];
      Tensor block(cnt, d);
      const double sign =
          (t % 2 == 1) ? 1.0 - 2.0 * spec.type_signal : 1.0;  // odd types flip
      const Index k = std::max<Index>(1, d / c_num);
      Index row = 0;
      Index first = 0;
      for (Index tt = 0; tt < t; ++tt) first += counts[static_cast<std::size_t>(tt)];
      for (Index i = 0; i < cnt; ++i, ++row) {
        const int32_t c = cls[static_cast<std::size_t>(first + i)];
        const auto mean = detail::class_pattern(c, d, c_num);
        for (Index j = 0; j < d; ++j) {
          const bool own_block = ((j - c * k) % d + d) % d < k;
          const double noise_std = own_block ? 1.0 + 2.0 * spec.dim_signal : 1.0;
          block.at(row, j) = separation * sign * mean[static_cast<std::size_t>(j)] +
                             noise_std * rng.normal();
        }
      }
      g.features[static_cast<std::size_t>(t)] = block;
      g.feat_dim[static_cast<std::size_t>(t)] = d;
    }
  }

  // edges: ring schema t -> (t+1) mod a; bipartite restricts to 0 -> 1
  auto sample_neighbor = [&](Index u, Index partner_type) -> Index {
    const int32_t c = cls[static_cast<std::size_t>(u)];
    const auto& same = members[static_cast<std::size_t>(partner_type)][static_cast<std::size_t>(c)];
    if (rng.uniform() < spec.homophily && !same.empty()) {
      return same[static_cast<std::size_t>(rng.below(same.size()))];
    }
    // uniform over the partner type
    Index first = 0;
    for (Index tt = 0; tt < partner_type; ++tt) first += counts[static_cast<std::size_t>(tt)];
    return first + static_cast<Index>(
                       rng.below(static_cast<std::uint64_t>(counts[static_cast<std::size_t>(partner_type)])));
  };

  const double half_degree = spec.avg_degree / 2.0;
  const Index base_out = static_cast<Index>(std::floor(half_degree));
  const double extra_p = half_degree - std::floor(half_degree);
  Index v0 = 0;
  for (Index t = 0; t < a; ++t) {
    const Index partner = spec.mode == "bipartite" ? 1 : (t + 1) % a;
    const int32_t etype = static_cast<int32_t>(t % spec.num_edge_types);
    const Index cnt = counts[static_cast<std::size_t>(t)];
    if (spec.mode == "bipartite" && t != 0) {
      v0 += cnt;
      continue;
    }
    for (Index i = 0; i < cnt; ++i) {
      const Index u = v0 + i;
      Index deg = base_out + (extra_p > 0.0 && rng.uniform() < extra_p ? 1 : 0);
      for (Index e = 0; e < deg; ++e) {
        Index v = sample_neighbor(u, partner);
        if (v == u) continue;  // no accidental loops
        g.src.push_back(u);
        g.dst.push_back(v);
        g.edge_type.push_back(etype);
      }
    }
    v0 += cnt;
  }

  // labels on the target type (type 0) — bipartite graphs stay unlabeled
  g.labels.assign(static_cast<std::size_t>(g.n), {});
  if (spec.mode == "mixed") {
    for (Index i = 0; i < counts[0]; ++i)
      g.labels[static_cast<std::size_t>(i)] = {cls[static_cast<std::size_t>(i)]};
    g.num_classes = c_num;
  }

  if (spec.featureless) apply_feature_fallback(g, "one_hot");
  g.finalize();
  return g;
}

// The hidden class of every node (recomputed from the seed); used by tests
// that need the generator's ground truth beyond the exposed labels.
inline std::vector<int32_t> synth_hidden_classes(const SynthSpec& spec) {
  spec.validate();
  const std::vector<Index> counts = spec.resolved_counts();
  Index n = 0;
  for (Index c : counts) n += c;
  Rng rng(spec.seed);
  std::vector<int32_t> cls(static_cast<std::size_t>(n));
  for (Index v = 0; v < n; ++v)
    cls[static_cast<std::size_t>(v)] =
        static_cast<int32_t>(rng.below(static_cast<std::uint64_t>(spec.num_classes)));
  return cls;
}

}  // namespace hetcan
