#pragma once
// Model <-> checkpoint conversion. The trailer carries the model-shape keys
// plus the graph dimensions the parameters were built against, so a loaded
// checkpoint rebuilds the identical structure and then overwrites every
// payload by name.

#include <algorithm>
#include <sstream>
#include <string>

#include "hetcan/cascade.hpp"
#include "hetcan/checkpoint.hpp"
#include "hetcan/config.hpp"

namespace hetcan {

inline Checkpoint to_checkpoint(const ModelState& st) {
  Checkpoint c;
  for (std::size_t i = 0; i < st.names.size(); ++i)
    c.tensors.emplace_back(st.names[i], st.tensors[i]);
  std::ostringstream meta;
  meta << cascade_config_text(st.cfg);
  meta << "variant = " << variant_name(st.variant) << "\n";
  meta << "num_node_types = " << st.dims.num_node_types << "\n";
  meta << "num_edge_types = " << st.dims.num_edge_types << "\n";
  meta << "num_classes = " << st.dims.num_classes << "\n";
  meta << "feat_dim = ";
  for (std::size_t i = 0; i < st.dims.feat_dim.size(); ++i)
    meta << (i ? "," : "") << st.dims.feat_dim[i];
  meta << "\n";
  meta << "epoch = " << st.epoch << "\n";
  c.meta = meta.str();
  return c;
}

inline ModelState model_from_checkpoint(const Checkpoint& c) {
  const KvFile kv = KvFile::parse_text(c.meta, "checkpoint trailer");
  KvReader r(kv);
  const CascadeConfig cfg = read_cascade_config(r);
  GraphDims dims;
  dims.num_node_types = r.get_index("num_node_types", 0);
  dims.num_edge_types = r.get_index("num_edge_types", 0);
  dims.num_classes = r.get_index("num_classes", 0);
  dims.feat_dim = r.get_index_list("feat_dim", {});
  const Variant variant = parse_variant(r.get_string("variant", "full"));
  const Index epoch = r.get_index("epoch", 0);
  r.reject_unknown("checkpoint trailer");

  ModelState st = build_model(cfg, dims, cfg.seed, variant);
  st.epoch = epoch;
  if (c.tensors.size() != st.names.size())
    throw DataError("checkpoint holds " + std::to_string(c.tensors.size()) +
                    " tensors, model expects " + std::to_string(st.names.size()));
  for (std::size_t i = 0; i < st.names.size(); ++i) {
    const Tensor* src = c.find(st.names[i]);
    if (!src) throw DataError("checkpoint is missing tensor '" + st.names[i] + "'");
    Tensor dst = st.tensors[i];
    if (src->rows() != dst.rows() || src->cols() != dst.cols())
      throw DimensionError("checkpoint tensor '" + st.names[i] + "' is " + src->shape() +
                           ", model expects " + dst.shape());
    std::copy(src->data(), src->data() + src->size(), dst.data());
  }
  return st;
}

inline void save_model(const std::string& path, const ModelState& st) {
  save_checkpoint(path, to_checkpoint(st));
}

inline ModelState load_model(const std::string& path) {
  return model_from_checkpoint(load_checkpoint(path));
}

}  // namespace hetcan
