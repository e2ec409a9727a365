#include <gtest/gtest.h>

#include <cmath>

#include "hetcan/gradcheck.hpp"
#include "hetcan/synth.hpp"
#include "hetcan/type_aware.hpp"
#include "oracles.hpp"

using namespace hetcan;

namespace {

// three nodes, one node type, edges 0->1 (type 0), 2->1 (type 1), 1->2
// (type 0), plus reserved self-loops
HeteroGraph tiny3() {
  HeteroGraph g;
  g.n = 3;
  g.num_node_types = 1;
  g.num_edge_types = 2;
  g.node_type = {0, 0, 0};
  g.src = {0, 2, 1};
  g.dst = {1, 1, 2};
  g.edge_type = {0, 1, 0};
  g.feat_dim = {2};
  g.features = {Tensor::zeros(3, 2)};
  g.labels.assign(3, {});
  g.finalize();
  return add_self_loops(g);
}

Tensor transpose_of(const oracle::Mat& m) {
  Tensor t(static_cast<Index>(m[0].size()), static_cast<Index>(m.size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j)
      t.at(static_cast<Index>(j), static_cast<Index>(i)) = m[i][j];
  return t;
}

Tensor column(const oracle::Vec& v) {
  Tensor t(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) t.at(static_cast<Index>(i), 0) = v[i];
  return t;
}

Tensor rows_of(const oracle::Mat& m) {
  Tensor t(static_cast<Index>(m.size()), static_cast<Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j)
      t.at(static_cast<Index>(i), static_cast<Index>(j)) = m[i][j];
  return t;
}

// hand-set head in the column-vector convention the oracle uses
struct FixtureHead {
  oracle::Mat w, w_r;  // w: [d x d]; w_r: [d_e x d_r]
  oracle::Vec a;       // 2d + d_e
};

TypeAwareHead to_params(const FixtureHead& f, Index d, Index d_e) {
  TypeAwareHead h;
  h.w = transpose_of(f.w);
  h.w_r = transpose_of(f.w_r);
  h.a_dst = column(oracle::Vec(f.a.begin(), f.a.begin() + d));
  h.a_src = column(oracle::Vec(f.a.begin() + d, f.a.begin() + 2 * d));
  h.a_edge = column(oracle::Vec(f.a.begin() + 2 * d, f.a.begin() + 2 * d + d_e));
  for (Tensor* t : {&h.w, &h.w_r, &h.a_dst, &h.a_src, &h.a_edge}) t->set_requires_grad(true);
  return h;
}

const oracle::Mat kH = {{1.0, 0.5}, {-0.5, 1.0}, {0.25, -0.25}};
const oracle::Mat kEdgeEmb = {{1.0, 0.5}, {-0.5, 0.25}, {0.2, 0.3}};  // row 2 = loop type

FixtureHead head_one() {
  return {{{1.0, 0.5}, {-0.5, 1.0}},
          {{0.5, 0.0}, {0.25, -0.5}},
          {0.3, -0.2, 0.1, 0.4, -0.3, 0.2}};
}

FixtureHead head_two() {
  return {{{0.2, -1.0}, {1.0, 0.3}},
          {{-0.25, 0.5}, {0.3, 0.2}},
          {-0.1, 0.5, 0.2, -0.2, 0.4, 0.1}};
}

std::vector<std::array<int, 3>> oracle_edges(const Wiring& w) {
  std::vector<std::array<int, 3>> edges;
  for (Index s = 0; s < w.num_slots; ++s)
    edges.push_back({static_cast<int>(w.src[static_cast<std::size_t>(s)]),
                     static_cast<int>(w.owner[static_cast<std::size_t>(s)]),
                     static_cast<int>(w.etype[static_cast<std::size_t>(s)])});
  return edges;
}

oracle::AttentionInputs oracle_inputs(const FixtureHead& f, const Wiring& w) {
  oracle::AttentionInputs in;
  in.h = kH;
  in.w = f.w;
  in.w_r = f.w_r;
  in.a = f.a;
  in.edge_emb = kEdgeEmb;
  in.edges = oracle_edges(w);
  return in;
}

}  // namespace

TEST(ProjectFeatures, PinnedExamples) {
  GradientTape tape(false);
  HeteroGraph g;
  g.n = 2;
  g.num_node_types = 2;
  g.num_edge_types = 1;
  g.node_type = {0, 1};
  g.src = {};
  g.dst = {};
  g.edge_type = {};
  g.feat_dim = {2, 2};
  g.features = {rows_of({{0.0, 0.0}}), rows_of({{2.0, 3.0}})};
  g.finalize();

  ProjectionParams p;
  p.w = {transpose_of({{9.0, 9.0}, {9.0, 9.0}}), transpose_of({{1.0, 0.0}, {1.0, 1.0}})};
  p.b = {rows_of({{1.0, 2.0}}), Tensor::zeros(1, 2)};
  Tensor h = project_features(tape, g, p, 2);
  EXPECT_DOUBLE_EQ(h.at(0, 0), 1.0);  // zero input -> bias row
  EXPECT_DOUBLE_EQ(h.at(0, 1), 2.0);
  EXPECT_DOUBLE_EQ(h.at(1, 0), 2.0);  // [[1,0],[1,1]] * (2,3) = (2,5)
  EXPECT_DOUBLE_EQ(h.at(1, 1), 5.0);

  ProjectionParams ident;
  ident.w = {Tensor::identity(2), Tensor::identity(2)};
  ident.b = {Tensor::zeros(1, 2), Tensor::zeros(1, 2)};
  Tensor same = project_features(tape, g, ident, 2);
  EXPECT_DOUBLE_EQ(same.at(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(same.at(1, 1), 3.0);

  Rng rng(1);
  ProjectionParams bad;
  bad.w = {Tensor::glorot(3, 2, rng), Tensor::identity(2)};
  bad.b = {Tensor::zeros(1, 2), Tensor::zeros(1, 2)};
  try {
    project_features(tape, g, bad, 2);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("type 0"), std::string::npos) << e.what();
  }
}

TEST(Combine, PinnedExamples) {
  GradientTape tape(false);
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  Tensor h = rows_of({{1.0, 2.0}, {0.0, 0.0}, {-1.0, 4.0}});

  Tensor ones_table = Tensor::ones(1, 2);
  Tensor same = combine(tape, h, w, ones_table);
  for (Index i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(same.data()[i], h.data()[i]);

  Tensor table = rows_of({{3.0, 4.0}});
  Tensor out = combine(tape, h, w, table);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(out.at(0, 1), 8.0);
  EXPECT_DOUBLE_EQ(out.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(out.at(2, 1), 16.0);
}

TEST(Attention, SingleSelfLoopIsOne) {
  GradientTape tape(false);
  HeteroGraph g;
  g.n = 1;
  g.num_node_types = 1;
  g.num_edge_types = 1;
  g.node_type = {0};
  g.feat_dim = {2};
  g.features = {Tensor::zeros(1, 2)};
  g.finalize();
  g = add_self_loops(g);
  Wiring w = make_wiring(g);

  Rng rng(4);
  TypeAwareLayer layer = make_type_aware_layer(2, 2, 2, 1, rng);
  Tensor h = rows_of({{0.7, -0.3}});
  Tensor edge_table = Tensor::glorot(2, 2, rng);
  Tensor wh = tape.matmul(h, layer.heads[0].w);
  Tensor alpha = attention_coefficients(tape, wh, w, edge_table, layer.heads[0], 0.2);
  EXPECT_DOUBLE_EQ(alpha.at(0, 0), 1.0);
}

TEST(Attention, IdenticalNeighborsShareEvenly) {
  // node 0 receives from three clones of the same neighbor profile over the
  // same edge type
  HeteroGraph g;
  g.n = 4;
  g.num_node_types = 1;
  g.num_edge_types = 1;
  g.node_type = {0, 0, 0, 0};
  g.src = {1, 2, 3, 1, 2, 3};
  g.dst = {0, 0, 0, 1, 2, 3};
  g.edge_type = {0, 0, 0, 0, 0, 0};
  g.feat_dim = {2};
  g.features = {Tensor::zeros(4, 2)};
  g.finalize();
  Wiring w = make_wiring(g);

  GradientTape tape(false);
  Rng rng(9);
  TypeAwareLayer layer = make_type_aware_layer(2, 2, 2, 1, rng);
  Tensor h = rows_of({{0.1, 0.2}, {0.5, -0.5}, {0.5, -0.5}, {0.5, -0.5}});
  Tensor edge_table = Tensor::glorot(1, 2, rng);
  Tensor wh = tape.matmul(h, layer.heads[0].w);
  Tensor alpha = attention_coefficients(tape, wh, w, edge_table, layer.heads[0], 0.2);
  for (Index s = 0; s < 3; ++s) EXPECT_NEAR(alpha.at(s, 0), 1.0 / 3.0, 1e-15);

  // aggregation equals the mean of the (identical) transforms
  Tensor out = aggregate_head(tape, wh, w, alpha, 0.2, /*identity_act=*/true);
  EXPECT_NEAR(out.at(0, 0), wh.at(1, 0), 1e-12);
  EXPECT_NEAR(out.at(0, 1), wh.at(1, 1), 1e-12);
}

TEST(Attention, EmptyNeighborhoodRejected) {
  HeteroGraph g = tiny3();
  // rebuild without self-loops: node 0 has no incoming edge
  HeteroGraph bare;
  bare.n = 3;
  bare.num_node_types = 1;
  bare.num_edge_types = 2;
  bare.node_type = {0, 0, 0};
  bare.src = {0, 2, 1};
  bare.dst = {1, 1, 2};
  bare.edge_type = {0, 1, 0};
  bare.feat_dim = {2};
  bare.features = {Tensor::zeros(3, 2)};
  bare.finalize();
  Wiring w = make_wiring(bare);

  GradientTape tape(false);
  Rng rng(2);
  TypeAwareLayer layer = make_type_aware_layer(2, 2, 2, 1, rng);
  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);
  Tensor wh = tape.matmul(h, layer.heads[0].w);
  try {
    attention_coefficients(tape, wh, w, edge_table, layer.heads[0], 0.2);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("node 0"), std::string::npos) << e.what();
  }
}

TEST(Attention, FixtureMatchesScalarOracle) {
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  GradientTape tape(false);

  const FixtureHead fix = head_one();
  TypeAwareHead head = to_params(fix, 2, 2);
  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);

  Tensor wh = tape.matmul(h, head.w);
  Tensor alpha = attention_coefficients(tape, wh, w, edge_table, head, 0.2);
  const oracle::Vec expected = oracle::attention_coefficients(oracle_inputs(fix, w));
  ASSERT_EQ(alpha.rows(), static_cast<Index>(expected.size()));
  for (Index s = 0; s < alpha.rows(); ++s)
    EXPECT_NEAR(alpha.at(s, 0), expected[static_cast<std::size_t>(s)], 1e-10) << "slot " << s;

  // per-neighborhood normalization
  for (Index v = 0; v < w.n; ++v) {
    double sum = 0.0;
    for (Index s = w.offsets[static_cast<std::size_t>(v)];
         s < w.offsets[static_cast<std::size_t>(v) + 1]; ++s)
      sum += alpha.at(s, 0);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(AttentionResidual, PinnedExamples) {
  GradientTape tape(false);
  Tensor now = Tensor::from_vector(3, 1, {0.6, 0.3, 0.1});
  Tensor prev = Tensor::from_vector(3, 1, {0.2, 0.5, 0.3});
  Tensor b0 = attention_residual(tape, now, prev, 0.0);
  for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(b0.at(i, 0), now.at(i, 0));
  Tensor b1 = attention_residual(tape, now, prev, 1.0);
  for (Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(b1.at(i, 0), prev.at(i, 0));
  Tensor bh = attention_residual(tape, now, prev, 0.5);
  EXPECT_DOUBLE_EQ(bh.at(0, 0), 0.4);
  Tensor first = attention_residual(tape, now, Tensor(), 0.5);
  EXPECT_TRUE(first.same_storage(now));
  Tensor wrong = Tensor::from_vector(2, 1, {0.5, 0.5});
  EXPECT_THROW(attention_residual(tape, now, wrong, 0.5), DimensionError);
  EXPECT_THROW(attention_residual(tape, now, prev, 1.5), ConfigError);
}

TEST(Aggregate, FixtureMatchesScalarOracle) {
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  GradientTape tape(false);

  const FixtureHead fix = head_one();
  TypeAwareHead head = to_params(fix, 2, 2);
  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);
  Tensor wh = tape.matmul(h, head.w);
  Tensor alpha = attention_coefficients(tape, wh, w, edge_table, head, 0.2);

  const auto in = oracle_inputs(fix, w);
  const oracle::Vec oalpha = oracle::attention_coefficients(in);

  for (bool identity : {true, false}) {
    Tensor out = aggregate_head(tape, wh, w, alpha, 0.2, identity);
    const oracle::Mat expect = oracle::aggregate(in, oalpha, identity);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 2; ++j)
        EXPECT_NEAR(out.at(i, j), expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                    1e-10);
  }
}

TEST(LayerForward, HeadAveragingMatchesOracle) {
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);
  TypeAwareOptions opt;
  Rng rng(1);

  // K=1 equals the single-head path
  {
    GradientTape tape(false);
    TypeAwareLayer single{{to_params(head_one(), 2, 2)}};
    LayerResult lr = layer_forward(tape, h, w, edge_table, single, {}, opt, false, rng);
    Tensor wh = tape.matmul(h, single.heads[0].w);
    Tensor alpha = attention_coefficients(tape, wh, w, edge_table, single.heads[0], opt.slope);
    Tensor direct = aggregate_head(tape, wh, w, alpha, opt.slope, false);
    for (Index i = 0; i < direct.size(); ++i)
      EXPECT_DOUBLE_EQ(lr.h.data()[i], direct.data()[i]);
  }

  // K=2 with identical heads equals K=1
  {
    GradientTape tape(false);
    TypeAwareLayer twin{{to_params(head_one(), 2, 2), to_params(head_one(), 2, 2)}};
    TypeAwareLayer single{{to_params(head_one(), 2, 2)}};
    LayerResult a = layer_forward(tape, h, w, edge_table, twin, {}, opt, false, rng);
    LayerResult b = layer_forward(tape, h, w, edge_table, single, {}, opt, false, rng);
    for (Index i = 0; i < a.h.size(); ++i) EXPECT_NEAR(a.h.data()[i], b.h.data()[i], 1e-15);
  }

  // K=2 distinct heads against the averaging oracle
  {
    GradientTape tape(false);
    TypeAwareLayer both{{to_params(head_one(), 2, 2), to_params(head_two(), 2, 2)}};
    LayerResult lr = layer_forward(tape, h, w, edge_table, both, {}, opt, false, rng);

    const auto in1 = oracle_inputs(head_one(), w);
    const auto in2 = oracle_inputs(head_two(), w);
    const oracle::Vec a1 = oracle::attention_coefficients(in1);
    const oracle::Vec a2 = oracle::attention_coefficients(in2);
    const oracle::Mat expect = oracle::multi_head_average({in1, in2}, {a1, a2}, false);
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 2; ++j)
        EXPECT_NEAR(lr.h.at(i, j), expect[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                    1e-10);
  }
}

TEST(Encoder, ResidualThreadingAndInvariances) {
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);
  Tensor ones_table = Tensor::ones(1, 2);
  Rng rng(1);

  // L=2 with beta=1: layer 2 coefficients equal layer 1 coefficients exactly
  {
    GradientTape tape(false);
    TypeAwareOptions opt;
    opt.beta = 1.0;
    std::vector<TypeAwareLayer> layers = {{{to_params(head_one(), 2, 2)}},
                                          {{to_params(head_two(), 2, 2)}}};
    EncoderResult res = type_aware_encoder_forward(tape, h, w, ones_table, edge_table, layers,
                                                   opt, false, rng);
    ASSERT_EQ(res.alpha_hat.size(), 2u);
    for (Index s = 0; s < w.num_slots; ++s)
      EXPECT_DOUBLE_EQ(res.alpha_hat[1][0].at(s, 0), res.alpha_hat[0][0].at(s, 0));
  }

  // mixed coefficients stay normalized per neighborhood at every layer
  {
    GradientTape tape(false);
    TypeAwareOptions opt;
    opt.beta = 0.3;
    std::vector<TypeAwareLayer> layers = {
        {{to_params(head_one(), 2, 2), to_params(head_two(), 2, 2)}},
        {{to_params(head_two(), 2, 2), to_params(head_one(), 2, 2)}}};
    EncoderResult res = type_aware_encoder_forward(tape, h, w, ones_table, edge_table, layers,
                                                   opt, false, rng);
    for (const auto& layer : res.alpha_hat)
      for (const auto& ah : layer)
        for (Index v = 0; v < w.n; ++v) {
          double sum = 0.0;
          for (Index s = w.offsets[static_cast<std::size_t>(v)];
               s < w.offsets[static_cast<std::size_t>(v) + 1]; ++s)
            sum += ah.at(s, 0);
          EXPECT_NEAR(sum, 1.0, 1e-9);
        }
  }

  // all-one table vs combine skipped: identical outputs
  {
    GradientTape tape(false);
    TypeAwareOptions opt;
    std::vector<TypeAwareLayer> layers = {{{to_params(head_one(), 2, 2)}}};
    EncoderResult with_table = type_aware_encoder_forward(tape, h, w, ones_table, edge_table,
                                                          layers, opt, false, rng);
    EncoderResult skipped = type_aware_encoder_forward(tape, h, w, ones_table, edge_table,
                                                       layers, opt, false, rng,
                                                       /*skip_combine=*/true);
    for (Index i = 0; i < with_table.h.size(); ++i)
      EXPECT_NEAR(with_table.h.data()[i], skipped.h.data()[i], 1e-12);
  }

  // identical edge-type rows make outputs invariant to type relabeling
  {
    GradientTape tape(false);
    TypeAwareOptions opt;
    Tensor flat_table = rows_of({{0.4, -0.2}, {0.4, -0.2}, {0.4, -0.2}});
    std::vector<TypeAwareLayer> layers = {{{to_params(head_one(), 2, 2)}}};
    EncoderResult base = type_aware_encoder_forward(tape, h, w, ones_table, flat_table, layers,
                                                    opt, false, rng);
    Wiring relabeled = w;
    for (auto& t : relabeled.etype) t = (t + 1) % 3;
    EncoderResult perm = type_aware_encoder_forward(tape, h, relabeled, ones_table, flat_table,
                                                    layers, opt, false, rng);
    for (Index i = 0; i < base.h.size(); ++i)
      EXPECT_NEAR(base.h.data()[i], perm.h.data()[i], 1e-12);
  }
}

TEST(Encoder, EdgeOrderInvariance) {
  // same graph, edges inserted in a different order
  HeteroGraph g1 = tiny3();
  HeteroGraph g2;
  g2.n = 3;
  g2.num_node_types = 1;
  g2.num_edge_types = 2;
  g2.node_type = {0, 0, 0};
  g2.src = {1, 2, 0};
  g2.dst = {2, 1, 1};
  g2.edge_type = {0, 1, 0};
  g2.feat_dim = {2};
  g2.features = {Tensor::zeros(3, 2)};
  g2.labels.assign(3, {});
  g2.finalize();
  g2 = add_self_loops(g2);

  Tensor h = rows_of(kH);
  Tensor edge_table = rows_of(kEdgeEmb);
  Tensor ones_table = Tensor::ones(1, 2);
  TypeAwareOptions opt;
  opt.beta = 0.25;
  Rng rng(1);
  std::vector<TypeAwareLayer> layers = {
      {{to_params(head_one(), 2, 2), to_params(head_two(), 2, 2)}},
      {{to_params(head_two(), 2, 2), to_params(head_one(), 2, 2)}}};

  GradientTape tape(false);
  EncoderResult a = type_aware_encoder_forward(tape, h, make_wiring(g1), ones_table, edge_table,
                                               layers, opt, false, rng);
  EncoderResult b = type_aware_encoder_forward(tape, h, make_wiring(g2), ones_table, edge_table,
                                               layers, opt, false, rng);
  for (Index i = 0; i < a.h.size(); ++i)
    EXPECT_NEAR(a.h.data()[i], b.h.data()[i], 1e-12);
}

TEST(Encoder, GradCheckSingleLayer) {
  HeteroGraph g = tiny3();
  Wiring w = make_wiring(g);
  Rng init(33);
  TypeAwareLayer layer = make_type_aware_layer(2, 2, 2, 2, init);
  Tensor edge_table = Tensor::glorot(3, 2, init);
  Tensor type_table = Tensor::ones_with_noise(1, 2, init, 0.01);
  Tensor h = Tensor::glorot(3, 2, init, false);
  TypeAwareOptions opt;
  opt.beta = 0.2;
  Rng fwd_rng(0);

  auto fn = [&](GradientTape& t) {
    EncoderResult res = type_aware_encoder_forward(t, h, w, type_table, edge_table, {layer}, opt,
                                                   false, fwd_rng);
    return t.scale(t.sum_all(t.hadamard(res.h, res.h)), 0.5);
  };
  std::vector<Tensor> params = {type_table, edge_table};
  for (const auto& hd : layer.heads) {
    params.push_back(hd.w);
    params.push_back(hd.w_r);
    params.push_back(hd.a_dst);
    params.push_back(hd.a_src);
    params.push_back(hd.a_edge);
  }
  const auto res = grad_check(fn, params);
  EXPECT_LT(res.max_rel_error, 1e-4)
      << "param " << res.worst_param << " coord " << res.worst_coord << ": " << res.analytic
      << " vs " << res.numeric;
}
