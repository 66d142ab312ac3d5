#include "doctest.h"

#include <cmath>

#include "pagcp/dataset.hpp"
#include "pagcp/random.hpp"
#include "pagcp/saliency.hpp"
#include "pagcp/toy_models.hpp"
#include "support.hpp"

using namespace pagcp;

namespace {

std::vector<GroupId> random_chain(const ChannelGroups& cg, Rng& rng, std::size_t length) {
  std::vector<GroupId> pool;
  for (const auto& g : cg.groups) {
    if (!g.pinned) pool.push_back(g.id);
  }
  rng.shuffle(pool);
  pool.resize(length);
  return pool;
}

}  // namespace

TEST_CASE("filter [1, -2, 3] gives raw 6, normalized 2, probability e^-2") {
  ModelGraph g = testing::dense_model(0, 3, {2});
  auto& w = g.weights.at("fc0.w");
  w.raw()[0] = 1.f;
  w.raw()[1] = -2.f;
  w.raw()[2] = 3.f;
  const auto cg = build_channel_groups(g, {"head"});
  const auto table = filter_l1_saliency(g, cg);
  const auto& e = table.at(cg.layer_groups("fc0")[0]);
  CHECK(e.raw == 6.0);
  CHECK(e.normalized == 2.0);
  CHECK(e.probability == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));

  const auto f = filter_l1(g, g.node("fc0"), 0, {1});
  CHECK(f.l1 == 4.0);
  CHECK(f.count == 2);
}

TEST_CASE("saliency table covers exactly the non-pinned groups") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const auto table = filter_l1_saliency(g, cg);
  CHECK(table.entries.size() == cg.unpinned_count());
  for (const auto& [id, e] : table.entries) {
    CHECK_FALSE(cg.group(id).pinned);
    CHECK(e.raw > 0.0);
    CHECK(e.probability == doctest::Approx(std::exp(-e.normalized)));
  }
  const auto ids = cg.layer_groups("mid_conv");
  const auto order = table.ascending(ids);
  CHECK(order.size() == ids.size());
  for (std::size_t i = 1; i < order.size(); ++i) {
    const auto& a = table.at(order[i - 1]);
    const auto& b = table.at(order[i]);
    CHECK((a.normalized < b.normalized || (a.normalized == b.normalized && order[i - 1] < order[i])));
  }
  const auto csv = table.to_csv(cg);
  CHECK(csv.rfind("group_id,layer,raw,normalized,probability\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(cg.unpinned_count() + 1));
  CHECK_THROWS_AS(table.at(cg.groups.size() + 5), Error);
}

TEST_CASE("residual group saliency averages its producers") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const auto table = filter_l1_saliency(g, cg);
  const auto id = cg.layer_groups("stem_conv+b1_conv2")[3];
  const auto a = filter_l1(g, g.node("stem_conv"), 3);
  const auto b = filter_l1(g, g.node("b1_conv2"), 3);
  CHECK(table.at(id).raw == doctest::Approx((a.l1 + b.l1) / 2));
  CHECK(table.at(id).normalized ==
        doctest::Approx((a.l1 / static_cast<double>(a.count) + b.l1 / static_cast<double>(b.count)) / 2));
}

TEST_CASE("l1 state: chains are additive and probabilities multiply") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const auto probe = StateProbe::l1_weight(cg);
  CHECK(probe.state_dim() == 1);
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto chain = random_chain(cg, rng, 2 + rng.below(3));
    const auto s = check_subadditivity(probe, g, chain);
    CHECK(s.holds);
    CHECK(std::abs(s.joint - s.bound) <= 1e-12 * std::max(1.0, s.bound));
    const auto p = check_probability_bound(probe, g, chain);
    CHECK(p.holds);
    CHECK(std::abs(p.p_joint - p.p_product) <= 1e-12);
  }
  // full state drops by exactly the transition
  const std::set<GroupId> all{cg.layer_groups("mid_conv")[0], cg.layer_groups("b1_conv1")[1]};
  const double f0 = probe.reference_outputs(g)(0, 0);
  CHECK(probe.transition(g, {}, all) > 0.0);
  CHECK(probe.transition(g, {}, all) < f0);
  CHECK_THROWS_AS(probe.transition(g, all, {}), Error);
}

TEST_CASE("loss state matches two direct forward passes") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const auto sample = probe_subset(make_toy_dataset(g, 4, 64, 16), 16, 3);
  const auto probe = StateProbe::loss(cg, sample);
  CHECK(probe.state_dim() == 2);
  BuiltinOracle direct(sample, "direct", false);

  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const auto pair = random_chain(cg, rng, 2);
    const std::set<GroupId> first{pair[0]}, both{pair[0], pair[1]};
    const Eigen::MatrixXd a = direct.sample_losses(g, mask_for(cg, first));
    const Eigen::MatrixXd b = direct.sample_losses(g, mask_for(cg, both));
    const double expect = (a - b).cwiseAbs().rowwise().sum().mean();
    CHECK(conditional_saliency(probe, g, first, pair[1]) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(conditional_saliency(probe, g, {}, pair[1]) == marginal_saliency(probe, g, pair[1]));

    const auto clamped = StateProbe::loss(cg, sample, true);
    const double clamped_expect = (b - a).cwiseMax(0.0).rowwise().sum().mean();
    CHECK(conditional_saliency(clamped, g, first, pair[1]) == doctest::Approx(clamped_expect).epsilon(1e-12));
    CHECK(conditional_saliency(clamped, g, first, pair[1]) <= conditional_saliency(probe, g, first, pair[1]) + 1e-15);
  }
}

TEST_CASE("loss state chains are subadditive") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const auto sample = probe_subset(make_toy_dataset(g, 4, 64, 16), 16, 3);
  for (bool clamped : {false, true}) {
    const auto probe = StateProbe::loss(cg, sample, clamped, 2);
    Rng rng(clamped ? 8 : 9);
    for (int trial = 0; trial < 10; ++trial) {
      const auto chain = random_chain(cg, rng, 2 + rng.below(3));
      const auto s = check_subadditivity(probe, g, chain);
      CHECK(s.terms.size() == chain.size());
      CHECK(s.holds);
      CHECK(check_probability_bound(probe, g, chain).holds);
    }
  }
}
