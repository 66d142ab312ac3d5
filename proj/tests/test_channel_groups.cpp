#include "doctest.h"

#include <algorithm>

#include "pagcp/channel_groups.hpp"
#include "pagcp/toy_models.hpp"
#include "support.hpp"

using namespace pagcp;

namespace {

std::int64_t producer_slot_count(const ChannelGroups& cg) {
  std::int64_t n = 0;
  for (const auto& g : cg.groups) {
    if (!g.pinned) n += static_cast<std::int64_t>(g.slots_with_role(AxisRole::producer_out).size());
  }
  return n;
}

}  // namespace

TEST_CASE("plain chain: every conv output channel is its own group") {
  const ModelGraph g = testing::chain_model(1, 2, {4, 3});
  const ChannelGroups cg = build_channel_groups(g, {"head"});
  // 4 + 3 conv channels, 3 pinned head outputs
  REQUIRE(cg.groups.size() == 10);
  CHECK(cg.unpinned_count() == 7);
  CHECK(cg.layers() == std::vector<std::string>{"conv0", "conv1"});
  for (GroupId id = 0; id < 4; ++id) {
    const auto& grp = cg.group(id);
    CHECK(grp.layer == "conv0");
    CHECK(grp.slots_with_role(AxisRole::producer_out) ==
          std::vector<ChannelSlot>{{"conv0", AxisRole::producer_out, id}});
    CHECK(grp.slots_with_role(AxisRole::consumer_in) ==
          std::vector<ChannelSlot>{{"conv1", AxisRole::consumer_in, id}});
    CHECK(grp.slots_with_role(AxisRole::norm_channel) ==
          std::vector<ChannelSlot>{{"bn0", AxisRole::norm_channel, id}});
    CHECK(grp.mask_points == std::vector<MaskPoint>{{"bn0.out", id}});
  }
  // conv1 channel c feeds 36 flattened features of the head
  CHECK(cg.group(4).slots_with_role(AxisRole::consumer_in).size() == 36);
  CHECK(cg.warnings.empty());
}

TEST_CASE("toy_mt_a group count matches the architecture table") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  // stem/b1_conv2 16, b1_conv1 16, br_a 24, br_b 8, mid 32, cls_conv 16,
  // cls_fc1 24, reg_conv 8 prunable; cls_fc2 10 and reg_fc 4 pinned.
  CHECK(cg.groups.size() == 158);
  CHECK(cg.unpinned_count() == 144);
  const std::vector<std::string> layers{"stem_conv+b1_conv2", "b1_conv1", "br_a_conv", "br_b_conv",
                                        "mid_conv",           "cls_conv", "cls_fc1",   "reg_conv"};
  CHECK(cg.layers() == layers);
  CHECK(cg.layer_producers("stem_conv+b1_conv2") == std::vector<std::string>{"stem_conv", "b1_conv2"});
  CHECK(cg.warnings.empty());

  // Partition: producer_out slots of unpinned groups equal unpinned producer channels.
  CHECK(producer_slot_count(cg) == 16 * 2 + 16 + 24 + 8 + 32 + 16 + 24 + 8);
}

TEST_CASE("residual add couples channels index by index") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  for (const auto id : cg.layer_groups("stem_conv+b1_conv2")) {
    const auto& grp = cg.group(id);
    const auto prods = grp.slots_with_role(AxisRole::producer_out);
    REQUIRE(prods.size() == 2);
    CHECK(prods[0].channel == prods[1].channel);
    CHECK(grp.mask_points.size() == 2);
    // stem output feeds b1_conv1 and br convs (after pooling)
    const auto ins = grp.slots_with_role(AxisRole::consumer_in);
    std::vector<std::string> consumers;
    for (const auto& s : ins) consumers.push_back(s.node_id);
    CHECK(consumers == std::vector<std::string>{"b1_conv1", "br_a_conv", "br_b_conv"});
  }
}

TEST_CASE("concat keeps producer groups separate and records offsets") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  REQUIRE(cg.concat_offsets.size() == 2);
  CHECK(cg.concat_offsets[0].offset == 0);
  CHECK(cg.concat_offsets[1].offset == 24);
  const auto br_b = cg.layer_groups("br_b_conv");
  REQUIRE(br_b.size() == 8);
  const auto ins = cg.group(br_b[3]).slots_with_role(AxisRole::consumer_in);
  CHECK(ins == std::vector<ChannelSlot>{{"mid_conv", AxisRole::consumer_in, 27}});
}

TEST_CASE("excluded heads and graph outputs are pinned") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const ChannelGroups cg = build_channel_groups(g, {"cls_fc2", "reg_fc"});
  for (const auto& grp : cg.groups) {
    const bool head = grp.layer == "cls_fc2" || grp.layer == "reg_fc";
    CHECK(grp.pinned == head);
  }
  // Without exclusions the heads are still pinned: their channels are graph outputs.
  const ChannelGroups open = build_channel_groups(g, {});
  CHECK(open.unpinned_count() == 144);
  // Excluding a trunk producer pins only its own outputs.
  const ChannelGroups more = build_channel_groups(g, {"cls_fc2", "reg_fc", "mid_conv"});
  CHECK(more.unpinned_count() == 144 - 32);
  CHECK_THROWS_AS(build_channel_groups(g, {"no_such_node"}), Error);
}

TEST_CASE("toy_mt_b: matmul bias epilogue, reshape flatten, transposed gemm") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_b);
  const ChannelGroups cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_b));
  CHECK(cg.warnings.empty());
  const std::vector<std::string> layers{"stem_conv+b1_conv2", "b1_conv1", "br_a_conv", "br_b_conv",
                                        "mid_conv",           "cls_fc1",  "reg_conv"};
  CHECK(cg.layers() == layers);
  const auto fc = cg.layer_groups("cls_fc1");
  REQUIRE(fc.size() == 16);
  const auto& grp = cg.group(fc[5]);
  CHECK(grp.slots_with_role(AxisRole::norm_channel) ==
        std::vector<ChannelSlot>{{"cls_fc1_bias", AxisRole::norm_channel, 5}});
  CHECK(grp.mask_points == std::vector<MaskPoint>{{"cls_fc1_bias.out", 5}});
  CHECK(grp.slots_with_role(AxisRole::consumer_in) ==
        std::vector<ChannelSlot>{{"cls_fc2", AxisRole::consumer_in, 5}});
}

TEST_CASE("batch norm that does not directly follow a producer pins with a warning") {
  ModelGraph g = testing::chain_model(2, 2, {4, 3});
  // Reroute bn1 to read relu0: conv1's output is then unused by a norm.
  for (auto& n : g.nodes) {
    if (n.id == "bn1") n.inputs[0] = "relu0.out";
    if (n.id == "relu1") n.inputs[0] = "conv1.out";
  }
  g.weights["bn1.s"] = TensorF({4});
  g.weights["bn1.b"] = TensorF({4});
  g.weights["bn1.m"] = TensorF({4});
  g.weights["bn1.v"] = TensorF({4});
  Node extra;
  extra.id = "sink";
  extra.op = OpKind::add;
  extra.op_type = "Add";
  g.weights["sink.c"] = TensorF({1});
  extra.inputs = {"bn1.out", "sink.c"};
  extra.outputs = {"sink.out"};
  g.nodes.push_back(extra);
  g.output_specs.push_back({"sink.out", {-1, 4, 6, 6}, {"N", "", "", ""}});
  validate(g);
  const ChannelGroups cg = build_channel_groups(g, {"head"});
  CHECK_FALSE(cg.warnings.empty());
  for (const auto id : std::vector<GroupId>{0, 1, 2, 3}) CHECK(cg.group(id).pinned);
}
