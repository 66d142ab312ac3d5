#include "doctest.h"

#include <cmath>

#include "pagcp/dataset.hpp"
#include "pagcp/oracle.hpp"
#include "pagcp/toy_models.hpp"
#include "support.hpp"

using namespace pagcp;

namespace {

TaskLossVector tlv(std::vector<double> v) {
  TaskLossVector out;
  for (std::size_t i = 0; i < v.size(); ++i) out.tasks.push_back("t" + std::to_string(i));
  out.values = std::move(v);
  return out;
}

TensorF make(Shape shape, std::vector<float> values) {
  TensorF t(std::move(shape));
  for (std::size_t i = 0; i < values.size(); ++i) t.raw()[i] = values[i];
  return t;
}

}  // namespace

TEST_CASE("relative change") {
  CHECK(relative_change(tlv({2.0}), tlv({2.3})).delta[0] == doctest::Approx(0.15).epsilon(1e-12));
  const auto rc = relative_change(tlv({1.0, 4.0}), tlv({1.1, 3.0}));
  CHECK(rc.delta[0] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rc.delta[1] == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK_FALSE(rc.warned());

  const auto zero = relative_change(tlv({0.0, 1.0}), tlv({0.5, 1.0}));
  CHECK(zero.delta[0] == 0.5);
  CHECK(zero.absolute[0]);
  CHECK(zero.warned());
  CHECK_THROWS_AS(relative_change(tlv({1.0}), tlv({1.0, 2.0})), Error);
}

TEST_CASE("perf drop metrics") {
  const std::vector<double> d{0.10, -0.25, 0.05};
  const auto linf = perf_drop(d);
  CHECK(linf.value == 0.25);
  CHECK(linf.argmax_task == 1);
  CHECK(perf_drop(d, DropMetric::l1_sum).value == doctest::Approx(0.40));
  CHECK(perf_drop(d, DropMetric::l2).value == doctest::Approx(std::sqrt(0.01 + 0.0625 + 0.0025)));
  CHECK(perf_drop(d, DropMetric::min).value == doctest::Approx(0.05));
  CHECK(perf_drop(d, DropMetric::min).argmax_task == 1);

  const std::vector<double> tie{0.2, -0.2};
  CHECK(perf_drop(tie).argmax_task == 0);
  CHECK_THROWS_AS(perf_drop(std::vector<double>{}), Error);

  for (auto m : {DropMetric::linf, DropMetric::l1_sum, DropMetric::l2, DropMetric::min}) {
    CHECK(drop_metric_from_name(to_string(m)) == m);
  }
  CHECK_FALSE(drop_metric_from_name("max").has_value());
}

TEST_CASE("per-sample losses by hand") {
  const std::vector<TaskSpec> tasks{{"cls", LossKind::cross_entropy, "logits"},
                                    {"reg", LossKind::mse, "reg"},
                                    {"box", LossKind::smooth_l1, "box"}};
  TensorMap outputs;
  outputs["logits"] = make({2, 3}, {1.f, 2.f, 3.f, 0.f, 0.f, 0.f});
  outputs["reg"] = make({2, 2}, {0.5f, -1.f, 2.f, 0.f});
  outputs["box"] = make({2, 2}, {0.f, 0.f, 0.f, 0.f});
  Batch b;
  b.targets.push_back(make({2}, {2.f, 0.f}));
  b.targets.push_back(make({2, 2}, {1.5f, 0.f, 2.f, 0.f}));    // every element off by one / exact
  b.targets.push_back(make({2, 2}, {0.5f, 3.f, -0.5f, 0.5f}));
  const auto m = per_sample_losses(outputs, b, tasks);

  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(m(0, 0) == doctest::Approx(lse - 3.0).epsilon(1e-12));
  CHECK(m(1, 0) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(m(0, 1) == doctest::Approx(1.0));
  CHECK(m(1, 1) == 0.0);
  CHECK(m(0, 2) == doctest::Approx((0.125 + 2.5) / 2));
  CHECK(m(1, 2) == doctest::Approx((0.125 + 0.125) / 2));

  b.targets[0] = make({2}, {3.f, 0.f});
  CHECK_THROWS_AS(per_sample_losses(outputs, b, tasks), Error);
}

TEST_CASE("mse with targets o + 1 is 1 and perfect targets give 0") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  EvalDataset data = make_toy_dataset(g, 3, 8, 4);
  for (auto& b : data.batches) {
    const auto out = forward(g, b.inputs);
    b.targets[1] = out.at("regression");
    for (Eigen::Index i = 0; i < b.targets[1].size(); ++i) b.targets[1].data()[i] += 1.0f;
  }
  CHECK(evaluate_losses(g, data)[1] == doctest::Approx(1.0).epsilon(1e-6));

  for (auto& b : data.batches) b.targets[1] = forward(g, b.inputs).at("regression");
  CHECK(evaluate_losses(g, data)[1] <= 1e-6);
}

TEST_CASE("toy dataset shape, save and load") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const EvalDataset data = make_toy_dataset(g, 5, 20, 8);
  CHECK(data.samples() == 20);
  CHECK(data.batches.size() == 3);
  CHECK(data.task_names() == std::vector<std::string>{"cls", "reg"});
  CHECK_NOTHROW(data.check(g));

  const auto dir = testing::scratch_dir("dataset_roundtrip");
  save_dataset(data, dir);
  const EvalDataset back = load_dataset(dir);
  CHECK(back.tasks == data.tasks);
  REQUIRE(back.batches.size() == data.batches.size());
  for (std::size_t i = 0; i < data.batches.size(); ++i) {
    CHECK(back.batches[i].inputs == data.batches[i].inputs);
    CHECK(back.batches[i].targets == data.batches[i].targets);
  }
  CHECK(evaluate_losses(g, back) == evaluate_losses(g, data));

  EvalDataset bad = data;
  bad.tasks[0].head = "missing";
  CHECK_THROWS_AS(bad.check(g), Error);
  CHECK_THROWS_AS(load_dataset(dir / "nope"), Error);
}

TEST_CASE("probe subset is seeded and keeps dataset order") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const EvalDataset data = make_toy_dataset(g, 5, 30, 7);
  const auto a = probe_subset(data, 10, 1);
  const auto b = probe_subset(data, 10, 1);
  const auto c = probe_subset(data, 10, 2);
  CHECK(a.samples() == 10);
  CHECK(a.batches.size() == 1);
  CHECK(a.batches[0].inputs == b.batches[0].inputs);
  CHECK_FALSE(a.batches[0].targets == c.batches[0].targets);
  CHECK(probe_subset(data, 100, 1).samples() == 30);

  // the full subset is the data in order; float batching differs slightly
  const auto all = probe_subset(data, 30, 9);
  const auto la = evaluate_losses(g, all), ld = evaluate_losses(g, data);
  for (std::size_t t = 0; t < la.size(); ++t) CHECK(la[t] == doctest::Approx(ld[t]).epsilon(1e-6));
}

TEST_CASE("builtin oracle matches direct evaluation, cached or not") {
  const ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  const auto cg = build_channel_groups(g, toy_head_nodes(ToyArch::toy_mt_a));
  const EvalDataset data = make_toy_dataset(g, 5, 12, 5);
  BuiltinOracle cached(data), plain(data, "probe", false);
  const std::set<GroupId> mask{cg.layer_groups("mid_conv")[0], cg.layer_groups("b1_conv1")[2]};
  const auto direct = evaluate_losses(g, data, cg, mask);
  const auto a = cached.evaluate(g, cg, mask);
  const auto b = plain.evaluate(g, cg, mask);
  CHECK(a.values == b.values);
  for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t] == doctest::Approx(direct[t]).epsilon(1e-12));
  CHECK(a.batch_id == "probe");
  CHECK(cached.evaluate(g, cg, {}) == plain.evaluate(g, cg, {}));
  CHECK(cached.evaluations() == 2);
  CHECK(graph_fingerprint(g).size() == 64);
  CHECK(graph_fingerprint(g) == graph_fingerprint(build_toy_model(0, ToyArch::toy_mt_a)));
}

TEST_CASE("non-finite activations are reported with the node") {
  ModelGraph g = build_toy_model(0, ToyArch::toy_mt_a);
  g.weights.at("mid_conv.weight").raw()[0] = std::numeric_limits<float>::infinity();
  const EvalDataset data = make_toy_dataset(build_toy_model(0, ToyArch::toy_mt_a), 5, 4, 4);
  try {
    evaluate_losses(g, data);
    FAIL("expected an evaluation error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::evaluation);
    CHECK_FALSE(e.node_id().empty());
  }
}
