#include "doctest.h"

#include "pagcp/cost.hpp"
#include "pagcp/pruning.hpp"
#include "pagcp/toy_models.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace pagcp;

namespace {

ModelGraph single_conv(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t hw) {
  ModelGraph g;
  g.input_specs.push_back({"x", {1, cin, hw, hw}, {"", "", "", ""}});
  g.weights["w"] = TensorF({cout, cin, k, k});
  Node n;
  n.id = "conv";
  n.op = OpKind::conv;
  n.op_type = "Conv";
  n.inputs = {"x", "w"};
  n.outputs = {"y"};
  const std::int64_t p = k / 2;
  n.attrs["pads"] = std::vector<std::int64_t>{p, p, p, p};
  g.nodes.push_back(n);
  g.output_specs.push_back({"y", {}, {}});
  validate(g);
  return g;
}

}  // namespace

TEST_CASE("3x3 conv, Cin 2, Cout 4, 8x8 output") {
  const ModelGraph g = single_conv(2, 4, 3, 8);
  CHECK(g.shapes.at("y") == Shape{1, 4, 8, 8});
  CHECK(node_flops(g, g.nodes[0], 2) == 9216);
  CHECK(testing::loop_count_flops(g, g.nodes[0], 2) == 9216);
  CHECK(count_cost(g).total_params == 72);
}

TEST_CASE("1x1 conv on a single pixel costs one MAC") {
  const ModelGraph g = single_conv(1, 1, 1, 1);
  CHECK(count_cost(g, 2).total_flops == 2);
  CHECK(count_cost(g, 1).total_flops == 1);
  CHECK(count_cost(g, 3).total_flops == 3);
}

TEST_CASE("node counts equal the loop-count oracle on every op kind") {
  std::set<OpKind> seen;
  for (auto arch : {ToyArch::toy_mt_a, ToyArch::toy_mt_b}) {
    const ModelGraph g = build_toy_model(0, arch);
    for (std::int64_t fpm : {1, 2}) {
      for (const auto& n : g.nodes) {
        CHECK_MESSAGE(node_flops(g, n, fpm) == testing::loop_count_flops(g, n, fpm), n.id);
        seen.insert(n.op);
      }
    }
  }
  CHECK(seen.size() == 12);  // every supported op except opaque
}

TEST_CASE("totals are the sums of per-node entries") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const CostReport r = count_cost(g);
  std::int64_t f = 0, p = 0;
  for (const auto& c : r.per_layer) {
    CHECK(c.flops >= 0);
    CHECK(c.params >= 0);
    f += c.flops;
    p += c.params;
  }
  CHECK(r.total_flops == f);
  CHECK(r.total_params == p);
  CHECK(r.per_layer.size() == g.nodes.size());
}

TEST_CASE("toy_mt_a params equal an independent tensor walk") {
  for (auto arch : {ToyArch::toy_mt_a, ToyArch::toy_mt_b}) {
    const ModelGraph g = build_toy_model(0, arch);
    CHECK(count_cost(g).total_params == testing::tensor_walk_params(g));
  }
}

TEST_CASE("any non-empty drop strictly lowers flops and params") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const CostReport base = count_cost(g);
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    auto d = testing::random_legal_drop(g, cg, rng);
    if (d.empty()) continue;
    const CostReport r = count_cost(apply_pruning(g, cg, d));
    CHECK(r.total_flops < base.total_flops);
    CHECK(r.total_params < base.total_params);
  }
  for (const auto& grp : cg.groups) {
    if (grp.pinned) continue;
    const CostReport r = count_cost(apply_pruning(g, cg, {grp.id}));
    CHECK(r.total_flops < base.total_flops);
    CHECK(r.total_params < base.total_params);
  }
}
