#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "pagcp/dataset.hpp"
#include "pagcp/onnx_io.hpp"
#include "pagcp/pruner.hpp"
#include "pagcp/pruning.hpp"
#include "pagcp/random.hpp"
#include "pagcp/toy_models.hpp"
#include "support.hpp"

using namespace pagcp;

namespace {

/// task 0 = 1 + sum of per-group penalties over the mask, task 1 constant.
class AdditiveOracle : public LossOracle {
 public:
  explicit AdditiveOracle(std::map<GroupId, double> penalty) : penalty_(std::move(penalty)) {}
  std::vector<std::string> task_names() const override { return {"a", "b"}; }
  TaskLossVector evaluate(const ModelGraph&, const ChannelGroups&, const std::set<GroupId>& mask) override {
    double sum = 1.0;
    for (auto id : mask) sum += penalty_.count(id) ? penalty_.at(id) : 0.0;
    ++calls;
    return {{"a", "b"}, {sum, 3.0}, "mock"};
  }
  int calls = 0;

 private:
  std::map<GroupId, double> penalty_;
};

/// Losses depend only on how many prunable groups have gone, masked or
/// removed, so masking and removal agree.
class WidthOracle : public LossOracle {
 public:
  explicit WidthOracle(std::size_t initial) : initial_(initial) {}
  std::vector<std::string> task_names() const override { return {"cls", "reg"}; }
  TaskLossVector evaluate(const ModelGraph&, const ChannelGroups& groups, const std::set<GroupId>& mask) override {
    const double gone = static_cast<double>(initial_ - groups.unpinned_count() + mask.size());
    return {{"cls", "reg"}, {1.0 + 0.01 * gone, 2.0 + 0.0001 * gone * gone}, "mock"};
  }

 private:
  std::size_t initial_;
};

class EchoOracle : public LossOracle {
 public:
  std::vector<std::string> task_names() const override { return {"cls", "reg"}; }
  TaskLossVector evaluate(const ModelGraph&, const ChannelGroups&, const std::set<GroupId>&) override {
    return {{"cls", "reg"}, {2.3, 0.5}, "echo"};
  }
};

TaskLossVector base_losses() { return {{"a", "b"}, {1.0, 3.0}, "mock"}; }

}  // namespace

TEST_CASE("config validation") {
  PagcpConfig c;
  CHECK_NOTHROW(c.check());
  for (auto mutate : std::vector<std::function<void(PagcpConfig&)>>{
           [](PagcpConfig& x) { x.alpha = 1.0; }, [](PagcpConfig& x) { x.d1 = 0.0; },
           [](PagcpConfig& x) { x.gamma = 0.0; }, [](PagcpConfig& x) { x.P = 1.5; },
           [](PagcpConfig& x) { x.probe_ratio = 1.0; }, [](PagcpConfig& x) { x.Gamma = 0.0; },
           [](PagcpConfig& x) { x.min_channels = 0; }, [](PagcpConfig& x) { x.eta = -1; }}) {
    PagcpConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.check(), Error);
  }
}

TEST_CASE("sensitive task comes from the masked delta") {
  const ModelGraph g = testing::chain_model(1, 2, {20});
  const auto cg = build_channel_groups(g, {"head"});
  const auto table = filter_l1_saliency(g, cg);
  std::map<GroupId, double> pen;
  for (const auto& [id, e] : table.entries) pen[id] = e.raw;
  AdditiveOracle oracle(pen);
  const auto ids = table.ascending(cg.layer_groups("conv0"));
  const auto probe = detect_sensitive_task(oracle, g, cg, ids, 0.05, base_losses());
  CHECK(probe.task == 0);
  CHECK_FALSE(probe.no_sensitivity);
  CHECK(probe.delta[0] == doctest::Approx(table.at(ids[0]).raw));
  CHECK(probe.delta[1] == 0.0);

  EchoOracle echo;
  const auto flat = detect_sensitive_task(echo, g, cg, ids, 0.05, echo.evaluate(g, cg, {}));
  CHECK(flat.task == 0);
  CHECK(flat.no_sensitivity);
}

TEST_CASE("greedy with 0.01 per group and d = 0.055 drops 5") {
  const ModelGraph g = testing::chain_model(1, 2, {20});
  const auto cg = build_channel_groups(g, {"head"});
  std::map<GroupId, double> pen;
  for (auto id : cg.layer_groups("conv0")) pen[id] = 0.01;
  AdditiveOracle oracle(pen);
  const auto ids = cg.layer_groups("conv0");
  const auto r = prune_layer_greedy(oracle, g, cg, ids, 1, 19, 0.055, 0, base_losses(), DropMetric::linf);
  CHECK(r.dropped.size() == 5);
  CHECK(r.achieved_drop == doctest::Approx(0.05));
  CHECK(r.achieved_drop <= 0.055);
  CHECK(r.ratio == 0.25);
  CHECK(r.evaluations == 6);
  CHECK(r.losses[0] == doctest::Approx(1.05));

  // chunks of 2 overshoot at 6 and stop at 4
  CHECK(prune_layer_greedy(oracle, g, cg, ids, 2, 19, 0.055, 0, base_losses(), DropMetric::linf).dropped.size() == 4);
  // cap wins over the threshold
  CHECK(prune_layer_greedy(oracle, g, cg, ids, 1, 3, 0.055, 0, base_losses(), DropMetric::linf).dropped.size() == 3);
  // nothing feasible
  const auto none = prune_layer_greedy(oracle, g, cg, ids, 1, 19, 0.005, 0, base_losses(), DropMetric::linf);
  CHECK(none.dropped.empty());
  CHECK(none.losses == base_losses());
}

TEST_CASE("greedy prefix against exhaustive search") {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto k = static_cast<std::int64_t>(3 + rng.below(10));  // K in [3, 12]
    const ModelGraph g = testing::chain_model(static_cast<std::uint64_t>(trial), 2, {k});
    const auto cg = build_channel_groups(g, {"head"});
    const auto table = filter_l1_saliency(g, cg);
    const auto ids = table.ascending(cg.layer_groups("conv0"));
    std::map<GroupId, double> pen;
    for (auto id : ids) pen[id] = 0.002 + 0.02 * rng.uniform();
    const bool proportional = trial % 2 == 0;
    if (proportional) {
      for (auto id : ids) pen[id] = 0.01 * table.at(id).normalized;
    }
    AdditiveOracle oracle(pen);
    const double d = 0.01 + 0.05 * rng.uniform();
    const auto r = prune_layer_greedy(oracle, g, cg, ids, 1, k, d, 0, base_losses(), DropMetric::linf);

    double greedy_sal = 0.0;
    for (auto id : r.dropped) greedy_sal += table.at(id).normalized;
    std::size_t best = 0;
    for (std::uint32_t bits = 0; bits < (1u << k); ++bits) {
      double cost = 0.0, sal = 0.0;
      std::size_t n = 0;
      for (std::int64_t i = 0; i < k; ++i) {
        if (bits >> i & 1u) {
          cost += pen.at(ids[i]);
          sal += table.at(ids[i]).normalized;
          ++n;
        }
      }
      if (cost > d) continue;
      best = std::max(best, n);
      CHECK_FALSE((n > r.dropped.size() && sal < greedy_sal));
    }
    // with penalties ordered like saliency the prefix is maximum-cardinality
    if (proportional) CHECK(best == r.dropped.size());
  }
}

TEST_CASE("top-P keeps the largest contributions") {
  const ModelGraph g = testing::chain_model(3, 2, {4, 6, 5});
  const auto cg = build_channel_groups(g, {"head"});
  std::vector<LayerDecision> decisions;
  std::map<std::string, std::int64_t> expect;
  const auto base = count_cost(g).total_flops;
  for (const auto& layer : {"conv0", "conv1", "conv2"}) {
    LayerDecision d;
    d.layer = layer;
    d.dropped = {cg.layer_groups(layer)[0]};
    expect[layer] = base - count_cost(apply_pruning(g, cg, {d.dropped[0]})).total_flops;
    decisions.push_back(d);
  }
  const auto sel = filter_top_p(g, cg, decisions, 2.0 / 3.0);
  CHECK(sel.contributions == expect);
  REQUIRE(sel.selected.size() == 2);
  std::vector<std::string> ranked{"conv0", "conv1", "conv2"};
  std::sort(ranked.begin(), ranked.end(), [&](auto& a, auto& b) { return expect[a] > expect[b]; });
  CHECK(sel.selected[0] == ranked[0]);
  CHECK(sel.selected[1] == ranked[1]);
  const std::set<GroupId> kept{cg.layer_groups(ranked[0])[0], cg.layer_groups(ranked[1])[0]};
  CHECK(export_model(sel.rebuilt) == export_model(apply_pruning(g, cg, kept)));
  CHECK(filter_top_p(g, cg, decisions, 1.0).selected.size() == 3);
}

TEST_CASE("Gamma = 1 runs no iterations") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  EchoOracle echo;
  PagcpConfig c;
  c.Gamma = 1.0;
  const auto r = run_pagcp(g, echo, c, toy_head_nodes(ToyArch::toy_mt_a));
  CHECK(r.plan.iterations.empty());
  CHECK(r.plan.status == RunStatus::target_reached);
  CHECK(export_model(r.graph) == export_model(g));
}

TEST_CASE("echo evaluator prunes every layer to min_channels") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto excl = toy_head_nodes(ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, excl);
  EchoOracle echo;
  PagcpConfig c;
  c.P = 1.0;
  const auto r = run_pagcp(g, echo, c, excl);
  REQUIRE_FALSE(r.plan.iterations.empty());
  for (const auto& d : r.plan.iterations[0].layer_decisions) {
    CHECK(static_cast<std::int64_t>(d.dropped.size()) == max_droppable(g, cg, d.layer, 1));
    CHECK(d.no_sensitivity);
    CHECK(d.achieved_drop == 0.0);
  }
  for (const auto& node : cg.layer_producers("mid_conv")) CHECK(r.plan.iterations[0].widths.at(node) == 1);
  CHECK(verify_plan(r.plan).empty());
  const auto again = run_pagcp(g, echo, c, excl);
  CHECK(plan_text(again.plan) == plan_text(r.plan));
}

TEST_CASE("unreachable target stalls") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  EchoOracle echo;
  PagcpConfig c;
  c.Gamma = 0.001;
  const auto r = run_pagcp(g, echo, c, toy_head_nodes(ToyArch::toy_mt_a));
  CHECK(r.plan.status == RunStatus::stalled);
  CHECK(r.plan.reserved_ratio > 0.001);
  CHECK(verify_plan(r.plan).empty());
}

TEST_CASE("eta stops the loop") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  EchoOracle echo;
  PagcpConfig c;
  c.Gamma = 0.01;
  c.eta = 1000;
  const auto r = run_pagcp(g, echo, c, toy_head_nodes(ToyArch::toy_mt_a));
  CHECK(r.plan.status == RunStatus::eta_reached);
  CHECK(r.plan.iterations.empty());
}

TEST_CASE("multi-iteration run: soundness, json round trip, resume") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto excl = toy_head_nodes(ToyArch::toy_mt_a);
  WidthOracle oracle(build_channel_groups(g, excl).unpinned_count());
  PagcpConfig c;
  c.alpha = 1.3;
  c.d1 = 0.02;
  c.Gamma = 0.3;
  const auto full = run_pagcp(g, oracle, c, excl);
  CHECK(full.plan.iterations.size() >= 2);
  CHECK(full.plan.status == RunStatus::target_reached);
  CHECK(full.plan.reserved_ratio <= 0.3);
  CHECK(verify_plan(full.plan).empty());

  // every accepted drop respects its threshold and the widths never grow
  auto widths = full.plan.initial_widths;
  for (const auto& it : full.plan.iterations) {
    for (const auto& d : it.layer_decisions) CHECK(d.achieved_drop <= d.threshold);
    for (const auto& [node, w] : it.widths) {
      CHECK(w <= widths.at(node));
      widths[node] = w;
    }
    CHECK(it.thresholds.size() == static_cast<std::size_t>(it.prunable_layers));
  }

  const auto text = plan_text(full.plan);
  CHECK(plan_text(plan_from_json(nlohmann::json::parse(text))) == text);

  std::vector<std::string> checkpoints;
  RunHooks hooks;
  hooks.stop_after_iterations = 1;
  hooks.on_iteration = [&](const PruningPlan& p, const ModelGraph&) { checkpoints.push_back(plan_text(p)); };
  const auto half = run_pagcp(g, oracle, c, excl, hooks);
  CHECK(half.plan.status == RunStatus::interrupted);
  CHECK(half.plan.iterations.size() == 1);
  CHECK(checkpoints.size() == 2);

  const auto reloaded = plan_from_json(nlohmann::json::parse(plan_text(half.plan)));
  const auto graph = load_model(export_model(half.graph));
  const auto resumed = run_pagcp(g, oracle, c, excl, {}, &reloaded, &graph);
  CHECK(plan_text(resumed.plan) == text);
  CHECK(export_model(resumed.graph) == export_model(full.graph));
}

TEST_CASE("violations are reported") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto excl = toy_head_nodes(ToyArch::toy_mt_a);
  WidthOracle oracle(build_channel_groups(g, excl).unpinned_count());
  PagcpConfig c;
  c.alpha = 1.3;
  c.d1 = 0.02;
  auto plan = run_pagcp(g, oracle, c, excl).plan;
  REQUIRE(verify_plan(plan).empty());
  auto bad = plan;
  for (auto& d : bad.iterations[0].layer_decisions) {
    if (!d.dropped.empty()) {
      d.threshold = d.achieved_drop / 2;
      break;
    }
  }
  CHECK_FALSE(verify_plan(bad).empty());
  bad = plan;
  bad.iterations[0].thresholds.back() *= 1.5;
  CHECK_FALSE(verify_plan(bad).empty());
  CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse("{\"format\": \"other\"}")), Error);
}

TEST_CASE("built-in oracle end to end on toy_mt_b") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_b);
  const auto excl = toy_head_nodes(ToyArch::toy_mt_b);
  BuiltinOracle oracle(probe_subset(make_toy_dataset(g, 1, 64, 32), 32, 2));
  PagcpConfig c;
  const auto r = run_pagcp(g, oracle, c, excl);
  CHECK(r.plan.reserved_ratio <= 0.6);
  CHECK(verify_plan(r.plan).empty());
  // the recorded final losses are those of the pruned graph
  const auto cg = build_channel_groups(r.graph, excl);
  CHECK(oracle.evaluate(r.graph, cg, {}) == r.plan.final_losses);
}
