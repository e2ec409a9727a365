#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hetcan/graph.hpp"

namespace hetcan {

namespace detail {

inline bool is_blank(const std::string& line) {
  for (char c : line)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

inline std::string strip(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline Index parse_index(const std::string& tok, const std::string& file, std::size_t line_no,
                         const char* what) {
  const std::string t = strip(tok);
  Index v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || v < 0)
    throw DataError(file + ":" + std::to_string(line_no) + ": bad " + what + " '" + tok + "'");
  return v;
}

inline double parse_double(const std::string& tok, const std::string& file, std::size_t line_no) {
  const std::string t = strip(tok);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw DataError(file + ":" + std::to_string(line_no) + ": bad float '" + tok + "'");
  }
}

// Calls fn(line_no, line) on every non-comment, non-blank line.
template <typename Fn>
void for_each_row(const std::string& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line) || line[0] == '#') continue;
    fn(line_no, line);
  }
}

}  // namespace detail

struct LoadOptions {
  bool symmetrize = true;
  std::string feature_fallback = "one_hot";
};

// Reads the three-file TSV layout (node / edge / optional label file).
// Node ids must form a dense 0..n-1 range; every node of a type either has a
// feature vector of that type's width or the whole type is featureless (then
// the fallback kicks in).
inline HeteroGraph load_graph(const std::string& node_file, const std::string& edge_file,
                              const std::string& label_file, const LoadOptions& opts = {}) {
  struct RawNode {
    Index id;
    Index type;
    std::vector<double> feat;
    bool has_feat;
    std::size_t line_no;
  };
  std::vector<RawNode> raw;
  std::unordered_map<Index, std::size_t> seen;

  detail::for_each_row(node_file, [&](std::size_t line_no, const std::string& line) {
    const auto cols = detail::split(line, '\t');
    if (cols.size() < 2 || cols.size() > 3)
      throw DataError(node_file + ":" + std::to_string(line_no) +
                      ": expected 2 or 3 tab-separated columns");
    RawNode nd;
    nd.id = detail::parse_index(cols[0], node_file, line_no, "node id");
    nd.type = detail::parse_index(cols[1], node_file, line_no, "type id");
    nd.line_no = line_no;
    nd.has_feat = cols.size() == 3 && !detail::strip(cols[2]).empty();
    if (nd.has_feat)
      for (const auto& tok : detail::split(cols[2], ','))
        nd.feat.push_back(detail::parse_double(tok, node_file, line_no));
    if (!seen.emplace(nd.id, raw.size()).second)
      throw DataError(node_file + ":" + std::to_string(line_no) + ": duplicate node id " +
                      std::to_string(nd.id));
    raw.push_back(std::move(nd));
  });
  if (raw.empty()) throw DataError(node_file + ": no nodes");

  HeteroGraph g;
  g.n = static_cast<Index>(raw.size());
  for (Index v = 0; v < g.n; ++v)
    if (!seen.count(v))
      throw DataError(node_file + ": node ids are not dense, id " + std::to_string(v) +
                      " missing");
  g.node_type.resize(static_cast<std::size_t>(g.n));
  for (const auto& nd : raw) {
    g.node_type[static_cast<std::size_t>(nd.id)] = static_cast<int32_t>(nd.type);
    g.num_node_types = std::max(g.num_node_types, nd.type + 1);
  }

  // group nodes by type in id order, collect per-type feature blocks
  std::vector<std::vector<const RawNode*>> by_type(static_cast<std::size_t>(g.num_node_types));
  for (const auto& nd : raw) by_type[static_cast<std::size_t>(nd.type)].push_back(&nd);
  for (auto& grp : by_type)
    std::sort(grp.begin(), grp.end(),
              [](const RawNode* a, const RawNode* b) { return a->id < b->id; });

  g.feat_dim.assign(static_cast<std::size_t>(g.num_node_types), 0);
  g.features.assign(static_cast<std::size_t>(g.num_node_types), Tensor());
  for (Index t = 0; t < g.num_node_types; ++t) {
    const auto& grp = by_type[static_cast<std::size_t>(t)];
    if (grp.empty()) continue;
    const bool first_has = grp[0]->has_feat;
    const Index width = first_has ? static_cast<Index>(grp[0]->feat.size()) : 0;
    Tensor block;
    if (first_has) block = Tensor(static_cast<Index>(grp.size()), width);
    Index row = 0;
    for (const RawNode* nd : grp) {
      if (nd->has_feat != first_has)
        throw DataError(node_file + ":" + std::to_string(nd->line_no) + ": node type " +
                        std::to_string(t) + " mixes featured and featureless nodes");
      if (nd->has_feat) {
        if (static_cast<Index>(nd->feat.size()) != width)
          throw DataError(node_file + ":" + std::to_string(nd->line_no) + ": node type " +
                          std::to_string(t) + " feature width " +
                          std::to_string(nd->feat.size()) + " != " + std::to_string(width));
        for (Index j = 0; j < width; ++j) block.at(row, j) = nd->feat[static_cast<std::size_t>(j)];
      }
      ++row;
    }
    if (first_has) {
      g.features[static_cast<std::size_t>(t)] = block;
      g.feat_dim[static_cast<std::size_t>(t)] = width;
    }
  }

  detail::for_each_row(edge_file, [&](std::size_t line_no, const std::string& line) {
    const auto cols = detail::split(line, '\t');
    if (cols.size() != 3)
      throw DataError(edge_file + ":" + std::to_string(line_no) +
                      ": expected 3 tab-separated columns");
    const Index s = detail::parse_index(cols[0], edge_file, line_no, "source id");
    const Index d = detail::parse_index(cols[1], edge_file, line_no, "destination id");
    const Index et = detail::parse_index(cols[2], edge_file, line_no, "edge type");
    if (s >= g.n || d >= g.n)
      throw DataError(edge_file + ":" + std::to_string(line_no) + ": edge endpoint " +
                      std::to_string(std::max(s, d)) + " >= node count " + std::to_string(g.n));
    g.src.push_back(s);
    g.dst.push_back(d);
    g.edge_type.push_back(static_cast<int32_t>(et));
    g.num_edge_types = std::max<Index>(g.num_edge_types, et + 1);
  });

  g.labels.assign(static_cast<std::size_t>(g.n), {});
  if (!label_file.empty() && std::filesystem::exists(label_file)) {
    detail::for_each_row(label_file, [&](std::size_t line_no, const std::string& line) {
      const auto cols = detail::split(line, '\t');
      if (cols.size() != 2)
        throw DataError(label_file + ":" + std::to_string(line_no) +
                        ": expected 2 tab-separated columns");
      const Index v = detail::parse_index(cols[0], label_file, line_no, "node id");
      if (v >= g.n)
        throw DataError(label_file + ":" + std::to_string(line_no) + ": node id " +
                        std::to_string(v) + " >= node count " + std::to_string(g.n));
      auto& ls = g.labels[static_cast<std::size_t>(v)];
      if (!ls.empty())
        throw DataError(label_file + ":" + std::to_string(line_no) + ": duplicate labels for node " +
                        std::to_string(v));
      for (const auto& tok : detail::split(cols[1], ','))
        ls.push_back(
            static_cast<int32_t>(detail::parse_index(tok, label_file, line_no, "label")));
    });
  }

  apply_feature_fallback(g, opts.feature_fallback);
  g.finalize();
  if (opts.symmetrize) g = symmetrize(g);
  return g;
}

// Convenience wrapper for the <dir>/{node,edge,label}.tsv layout.
inline HeteroGraph load_dataset_dir(const std::string& dir, const LoadOptions& opts = {}) {
  namespace fs = std::filesystem;
  const std::string node_file = (fs::path(dir) / "node.tsv").string();
  const std::string edge_file = (fs::path(dir) / "edge.tsv").string();
  const std::string label_file = (fs::path(dir) / "label.tsv").string();
  if (!fs::exists(node_file)) throw DataError("dataset dir " + dir + " has no node.tsv");
  if (!fs::exists(edge_file)) throw DataError("dataset dir " + dir + " has no edge.tsv");
  return load_graph(node_file, edge_file, label_file, opts);
}

// Full-precision float so a written graph reloads bit-identically.
inline std::string format_double(double v) { return format_g17(v); }

// Writes node.tsv / edge.tsv and, when any node is labeled, label.tsv.
inline void write_graph(const HeteroGraph& g, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "node.tsv");
    if (!out) throw DataError("cannot write node.tsv under " + dir);
    for (Index v = 0; v < g.n; ++v) {
      const Index t = g.node_type[static_cast<std::size_t>(v)];
      out << v << '\t' << t;
      const auto& block = g.features[static_cast<std::size_t>(t)];
      if (!block.empty()) {
        out << '\t';
        const Index r = g.local_index[static_cast<std::size_t>(v)];
        for (Index j = 0; j < block.cols(); ++j) {
          if (j) out << ',';
          out << format_double(block.at(r, j));
        }
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(fs::path(dir) / "edge.tsv");
    if (!out) throw DataError("cannot write edge.tsv under " + dir);
    for (Index i = 0; i < g.num_edges(); ++i) {
      if (g.self_loops_added && g.edge_type[static_cast<std::size_t>(i)] == g.self_loop_type())
        continue;  // reserved loops are reconstructed, not persisted
      out << g.src[static_cast<std::size_t>(i)] << '\t' << g.dst[static_cast<std::size_t>(i)]
          << '\t' << g.edge_type[static_cast<std::size_t>(i)] << '\n';
    }
  }
  bool any_label = false;
  for (const auto& ls : g.labels) any_label = any_label || !ls.empty();
  if (any_label) {
    std::ofstream out(fs::path(dir) / "label.tsv");
    if (!out) throw DataError("cannot write label.tsv under " + dir);
    for (Index v = 0; v < g.n; ++v) {
      const auto& ls = g.labels[static_cast<std::size_t>(v)];
      if (ls.empty()) continue;
      out << v << '\t';
      for (std::size_t i = 0; i < ls.size(); ++i) {
        if (i) out << ',';
        out << ls[i];
      }
      out << '\n';
    }
  }
}

}  // namespace hetcan
