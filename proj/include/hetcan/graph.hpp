#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "hetcan/common.hpp"
#include "hetcan/rng.hpp"
#include "hetcan/tensor.hpp"

namespace hetcan {

// Typed multigraph. Nodes carry a type in [0, num_node_types); edges carry a
// type in [0, num_edge_types); features are stored as one dense block per
// node type (types may have different feature widths). Incoming adjacency is
// kept in CSR form because message passing aggregates over each target
// node's in-neighborhood; within a destination bucket, edges keep the order
// they were inserted in.
//
// Self-loops added by add_self_loops use the reserved edge type
// num_edge_types, leaving the file-declared types untouched.
struct HeteroGraph {
  Index n = 0;
  Index num_node_types = 0;
  Index num_edge_types = 0;  // excludes the reserved self-loop type
  std::vector<int32_t> node_type;

  // edge list in insertion order
  std::vector<Index> src, dst;
  std::vector<int32_t> edge_type;
  bool self_loops_added = false;

  // per-type feature blocks; row local_index[v] of features[node_type[v]]
  // belongs to node v
  std::vector<Index> feat_dim;
  std::vector<Tensor> features;
  std::vector<Index> local_index;
  std::vector<std::vector<Index>> nodes_of_type;

  // labels: empty vector = unlabeled node
  std::vector<std::vector<int32_t>> labels;
  Index num_classes = 0;
  bool multi_label = false;

  // CSR over incoming edges, built by finalize()
  std::vector<Index> in_offsets;   // length n+1
  std::vector<Index> in_src;       // source node per slot
  std::vector<int32_t> in_etype;   // edge type per slot

  Index num_edges() const { return static_cast<Index>(src.size()); }
  Index type_count(Index t) const {
    return static_cast<Index>(nodes_of_type[static_cast<std::size_t>(t)].size());
  }
  int32_t self_loop_type() const { return static_cast<int32_t>(num_edge_types); }
  // size the edge-type embedding table must have
  Index edge_type_rows() const { return num_edge_types + 1; }

  std::vector<Index> labeled_nodes() const {
    std::vector<Index> out;
    for (Index v = 0; v < n; ++v)
      if (!labels[static_cast<std::size_t>(v)].empty()) out.push_back(v);
    return out;
  }

  // Validates the structure and (re)builds node-type groupings and the
  // incoming CSR. Call after any structural mutation.
  void finalize() {
    if (n < 0 || num_node_types <= 0) throw DataError("graph: node/type counts invalid");
    if (static_cast<Index>(node_type.size()) != n)
      throw DataError("graph: node_type length " + std::to_string(node_type.size()) +
                      " != n " + std::to_string(n));
    labels.resize(static_cast<std::size_t>(n));

    nodes_of_type.assign(static_cast<std::size_t>(num_node_types), {});
    local_index.assign(static_cast<std::size_t>(n), 0);
    for (Index v = 0; v < n; ++v) {
      const int32_t t = node_type[static_cast<std::size_t>(v)];
      if (t < 0 || t >= num_node_types)
        throw DataError("graph: node " + std::to_string(v) + " has type " + std::to_string(t) +
                        " outside [0," + std::to_string(num_node_types) + ")");
      local_index[static_cast<std::size_t>(v)] =
          static_cast<Index>(nodes_of_type[static_cast<std::size_t>(t)].size());
      nodes_of_type[static_cast<std::size_t>(t)].push_back(v);
    }

    if (features.size() != static_cast<std::size_t>(num_node_types) ||
        feat_dim.size() != static_cast<std::size_t>(num_node_types))
      throw DataError("graph: feature blocks missing for some node type");
    for (Index t = 0; t < num_node_types; ++t) {
      const auto& f = features[static_cast<std::size_t>(t)];
      if (f.empty() && feat_dim[static_cast<std::size_t>(t)] == 0)
        continue;  // featureless type, fallback not applied yet
      if (f.rows() != type_count(t) || f.cols() != feat_dim[static_cast<std::size_t>(t)])
        throw DataError("graph: feature block for type " + std::to_string(t) + " is " +
                        f.shape() + ", expected " +
                        Tensor::shape_string(type_count(t), feat_dim[static_cast<std::size_t>(t)]));
    }

    const Index e = num_edges();
    if (static_cast<Index>(dst.size()) != e || static_cast<Index>(edge_type.size()) != e)
      throw DataError("graph: edge arrays disagree in length");
    const int32_t max_etype =
        static_cast<int32_t>(num_edge_types) - (self_loops_added ? 0 : 1);
    for (Index i = 0; i < e; ++i) {
      if (src[static_cast<std::size_t>(i)] < 0 || src[static_cast<std::size_t>(i)] >= n ||
          dst[static_cast<std::size_t>(i)] < 0 || dst[static_cast<std::size_t>(i)] >= n)
        throw DataError("graph: edge " + std::to_string(i) + " endpoint out of range");
      const int32_t et = edge_type[static_cast<std::size_t>(i)];
      if (et < 0 || et > max_etype)
        throw DataError("graph: edge " + std::to_string(i) + " has type " + std::to_string(et) +
                        " outside the declared range");
    }

    Index max_label = -1;
    multi_label = false;
    for (const auto& ls : labels) {
      if (ls.size() > 1) multi_label = true;
      for (int32_t c : ls) {
        if (c < 0) throw DataError("graph: negative class id");
        max_label = std::max<Index>(max_label, c);
      }
    }
    if (num_classes < max_label + 1) num_classes = max_label + 1;

    build_csr();
  }

  // dense single-label vector for loss/metrics; -1 where unlabeled
  std::vector<int32_t> single_labels() const {
    std::vector<int32_t> out(static_cast<std::size_t>(n), -1);
    for (Index v = 0; v < n; ++v) {
      const auto& ls = labels[static_cast<std::size_t>(v)];
      if (!ls.empty()) out[static_cast<std::size_t>(v)] = ls[0];
    }
    return out;
  }

 private:
  void build_csr() {
    const Index e = num_edges();
    in_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
    for (Index i = 0; i < e; ++i) ++in_offsets[static_cast<std::size_t>(dst[i]) + 1];
    for (Index v = 0; v < n; ++v)
      in_offsets[static_cast<std::size_t>(v) + 1] += in_offsets[static_cast<std::size_t>(v)];
    in_src.assign(static_cast<std::size_t>(e), 0);
    in_etype.assign(static_cast<std::size_t>(e), 0);
    std::vector<Index> cursor(in_offsets.begin(), in_offsets.end() - 1);
    for (Index i = 0; i < e; ++i) {
      const Index slot = cursor[static_cast<std::size_t>(dst[i])]++;
      in_src[static_cast<std::size_t>(slot)] = src[i];
      in_etype[static_cast<std::size_t>(slot)] = edge_type[i];
    }
  }
};

// Appends one (v, v, reserved type) edge per node. A second call is a no-op.
inline HeteroGraph add_self_loops(const HeteroGraph& g) {
  if (g.self_loops_added) return g;
  HeteroGraph out = g;
  for (Index v = 0; v < out.n; ++v) {
    out.src.push_back(v);
    out.dst.push_back(v);
    out.edge_type.push_back(out.self_loop_type());
  }
  out.self_loops_added = true;
  out.finalize();
  return out;
}

// Adds the reverse of every edge (same type) unless that exact reverse is
// already present. Loops are never duplicated.
inline HeteroGraph symmetrize(const HeteroGraph& g) {
  HeteroGraph out = g;
  std::unordered_set<std::uint64_t> seen;
  auto key = [&g](Index s, Index d, int32_t t) {
    return (static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(g.n) +
            static_cast<std::uint64_t>(d)) *
               static_cast<std::uint64_t>(g.edge_type_rows() + 1) +
           static_cast<std::uint64_t>(t);
  };
  const Index e = g.num_edges();
  for (Index i = 0; i < e; ++i) seen.insert(key(g.src[i], g.dst[i], g.edge_type[i]));
  for (Index i = 0; i < e; ++i) {
    if (g.src[i] == g.dst[i]) continue;
    if (seen.insert(key(g.dst[i], g.src[i], g.edge_type[i])).second) {
      out.src.push_back(g.dst[i]);
      out.dst.push_back(g.src[i]);
      out.edge_type.push_back(g.edge_type[i]);
    }
  }
  out.finalize();
  return out;
}

struct Splits {
  std::vector<Index> train, valid, test;
  std::vector<char> train_mask, valid_mask, test_mask;
};

// Shuffles the labeled nodes with the seeded generator and partitions them
// by the given ratios (largest-remainder rounding, so each part is within
// one node of its exact share).
inline Splits split_nodes(const HeteroGraph& g, double train_ratio, double valid_ratio,
                          double test_ratio, std::uint64_t seed) {
  if (train_ratio <= 0.0 || valid_ratio <= 0.0 || test_ratio <= 0.0)
    throw ConfigError("split_nodes: all ratios must be positive");
  const double s = train_ratio + valid_ratio + test_ratio;
  if (std::fabs(s - 1.0) > 1e-9)
    throw ConfigError("split_nodes: ratios sum to " + std::to_string(s) + ", expected 1");

  std::vector<Index> ids = g.labeled_nodes();
  const auto m = static_cast<Index>(ids.size());
  if (m < 3) throw DataError("split_nodes: need at least 3 labeled nodes, have " +
                             std::to_string(m));

  Rng rng(seed);
  rng.shuffle(ids);

  const double ratios[3] = {train_ratio, valid_ratio, test_ratio};
  Index counts[3];
  double frac[3];
  Index assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(m);
    counts[i] = static_cast<Index>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  while (assigned < m) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best]) best = i;
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }

  Splits sp;
  sp.train_mask.assign(static_cast<std::size_t>(g.n), 0);
  sp.valid_mask.assign(static_cast<std::size_t>(g.n), 0);
  sp.test_mask.assign(static_cast<std::size_t>(g.n), 0);
  Index pos = 0;
  for (Index i = 0; i < counts[0]; ++i, ++pos) {
    sp.train.push_back(ids[static_cast<std::size_t>(pos)]);
    sp.train_mask[static_cast<std::size_t>(ids[static_cast<std::size_t>(pos)])] = 1;
  }
  for (Index i = 0; i < counts[1]; ++i, ++pos) {
    sp.valid.push_back(ids[static_cast<std::size_t>(pos)]);
    sp.valid_mask[static_cast<std::size_t>(ids[static_cast<std::size_t>(pos)])] = 1;
  }
  for (Index i = 0; i < counts[2]; ++i, ++pos) {
    sp.test.push_back(ids[static_cast<std::size_t>(pos)]);
    sp.test_mask[static_cast<std::size_t>(ids[static_cast<std::size_t>(pos)])] = 1;
  }
  return sp;
}

// One-hot (by index within the node's type block) or constant-1 features for
// node types that came without any. Counts types directly from node_type so
// it works on graphs that have not been finalized yet. Returns the types it
// touched.
inline std::vector<Index> apply_feature_fallback(HeteroGraph& g, const std::string& mode) {
  if (mode != "one_hot" && mode != "all_one")
    throw ConfigError("feature_fallback must be one_hot or all_one, got '" + mode + "'");
  std::vector<Index> counts(static_cast<std::size_t>(g.num_node_types), 0);
  for (int32_t t : g.node_type) ++counts[static_cast<std::size_t>(t)];
  std::vector<Index> touched;
  for (Index t = 0; t < g.num_node_types; ++t) {
    auto& f = g.features[static_cast<std::size_t>(t)];
    if (!f.empty()) continue;
    const Index cnt = counts[static_cast<std::size_t>(t)];
    if (mode == "one_hot") {
      f = Tensor::identity(cnt);
      g.feat_dim[static_cast<std::size_t>(t)] = cnt;
    } else {
      f = Tensor::ones(cnt, 1);
      g.feat_dim[static_cast<std::size_t>(t)] = 1;
    }
    touched.push_back(t);
  }
  return touched;
}

}  // namespace hetcan
