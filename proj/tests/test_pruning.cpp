#include "doctest.h"

#include "pagcp/dataset.hpp"
#include "pagcp/onnx_io.hpp"
#include "pagcp/oracle.hpp"
#include "pagcp/pruning.hpp"
#include "pagcp/toy_models.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace pagcp;

TEST_CASE("empty drop returns an identical graph") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const ModelGraph p = apply_pruning(g, cg, {});
  CHECK(isomorphic(p, g));
  CHECK(export_model(p) == export_model(g));
}

TEST_CASE("dropping one group of conv(4) -> conv(3)") {
  const ModelGraph g = testing::chain_model(4, 2, {4, 3});
  const ChannelGroups cg = build_channel_groups(g, {"head"});
  const ModelGraph p = apply_pruning(g, cg, {1});
  CHECK(p.weights.at("conv0.w").shape() == Shape{3, 2, 3, 3});
  CHECK(p.weights.at("conv1.w").shape() == Shape{3, 3, 3, 3});
  CHECK(p.weights.at("bn0.s").shape() == Shape{3});
  CHECK(p.shapes.at("conv0.out") == Shape{1, 3, 6, 6});
  // surviving slices are the original channels 0, 2, 3
  const auto& w0 = g.weights.at("conv0.w");
  const auto& w1 = p.weights.at("conv0.w");
  for (std::int64_t i = 0; i < 18; ++i) {
    CHECK(w1.raw()[i] == w0.raw()[i]);
    CHECK(w1.raw()[18 + i] == w0.raw()[36 + i]);
  }
  // original graph untouched
  CHECK(g.weights.at("conv0.w").shape() == Shape{4, 2, 3, 3});
}

TEST_CASE("pinned groups and min_channels are enforced") {
  const ModelGraph g = testing::chain_model(4, 2, {4, 3});
  const ChannelGroups cg = build_channel_groups(g, {"head"});
  try {
    apply_pruning(g, cg, {8});
    FAIL("expected PinnedGroup");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::pinned_group);
  }
  try {
    apply_pruning(g, cg, {4, 5, 6});
    FAIL("expected BelowMinChannels");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::below_min_channels);
    CHECK(e.node_id() == "conv1");
  }
  CHECK_NOTHROW(apply_pruning(g, cg, {4, 5}));
  CHECK_THROWS_AS(apply_pruning(g, cg, {4, 5}, 2), Error);
  CHECK(max_droppable(g, cg, "conv1", 1) == 2);
  CHECK(max_droppable(g, cg, "conv0", 2) == 2);
}

TEST_CASE("pruned models export, reload and validate") {
  for (auto arch : {ToyArch::toy_mt_a, ToyArch::toy_mt_b}) {
    const ModelGraph g = build_toy_model(2, arch);
    const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(arch));
    Rng rng(5);
    const ModelGraph p = apply_pruning(g, cg, testing::random_legal_drop(g, cg, rng));
    const ModelGraph back = load_model(export_model(p));
    CHECK(isomorphic(back, p));
    CHECK(back.shapes == p.shapes);
  }
}

TEST_CASE("removal matches masking of post-normalization activations") {
  for (auto arch : {ToyArch::toy_mt_a, ToyArch::toy_mt_b}) {
    const ModelGraph g = build_toy_model(0, arch);
    const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(arch));
    const TensorMap x{{"input", testing::random_tensor({4, 3, 16, 16}, 9)}};
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
      const auto dropped = testing::random_legal_drop(g, cg, rng);
      const TensorMap masked = forward(g, x, mask_for(cg, dropped));
      const TensorMap removed = forward(apply_pruning(g, cg, dropped), x);
      for (const auto& [name, t] : masked) CHECK(testing::close(removed.at(name), t, 1e-5));
    }
  }
}

TEST_CASE("every single group of toy_mt_a is removable with matching outputs") {
  const ModelGraph g = build_toy_model(1, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const TensorMap x{{"input", testing::random_tensor({2, 3, 16, 16}, 3)}};
  for (const auto& grp : cg.groups) {
    if (grp.pinned) continue;
    const TensorMap masked = forward(g, x, mask_for(cg, {grp.id}));
    const TensorMap removed = forward(apply_pruning(g, cg, {grp.id}), x);
    for (const auto& [name, t] : masked) CHECK(testing::close(removed.at(name), t, 1e-5));
  }
}

TEST_CASE("loss evaluation agrees between masked and pruned graphs") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const EvalDataset data = make_toy_dataset(g, 1, 32, 16);
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto dropped = testing::random_legal_drop(g, cg, rng);
    const TaskLossVector a = evaluate_losses(g, data, cg, dropped);
    const TaskLossVector b = evaluate_losses(apply_pruning(g, cg, dropped), data);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(std::abs(a[t] - b[t]) <= 1e-5 * std::abs(b[t]));
  }
}
