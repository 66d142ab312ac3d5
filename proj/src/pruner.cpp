#include "pagcp/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

#include "pagcp/error.hpp"
#include "pagcp/pruning.hpp"

namespace pagcp {

using nlohmann::json;

std::string_view to_string(TargetMetric metric) {
  return metric == TargetMetric::flops ? "flops" : "params";
}

std::optional<TargetMetric> target_metric_from_name(std::string_view name) {
  if (name == "flops") return TargetMetric::flops;
  if (name == "params") return TargetMetric::params;
  return std::nullopt;
}

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::running: return "running";
    case RunStatus::target_reached: return "target_reached";
    case RunStatus::eta_reached: return "eta_reached";
    case RunStatus::stalled: return "stalled";
    case RunStatus::iteration_limit: return "iteration_limit";
    case RunStatus::interrupted: return "interrupted";
  }
  return "unknown";
}

namespace {

RunStatus run_status_from_name(const std::string& name) {
  for (auto s : {RunStatus::running, RunStatus::target_reached, RunStatus::eta_reached,
                 RunStatus::stalled, RunStatus::iteration_limit, RunStatus::interrupted}) {
    if (to_string(s) == name) return s;
  }
  throw Error(ErrorKind::config, "unknown run status '" + name + "'");
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorKind::config, message);
}

}  // namespace

void PagcpConfig::check() const {
  require(std::isfinite(alpha) && alpha > 1.0, "alpha must be greater than 1");
  require(d1 > 0.0 && d1 < 1.0, "d1 must lie in (0, 1)");
  require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  require(P > 0.0 && P <= 1.0, "P must lie in (0, 1]");
  require(probe_ratio > 0.0 && probe_ratio < 1.0, "probe_ratio must lie in (0, 1)");
  require(Gamma > 0.0 && Gamma <= 1.0, "Gamma must lie in (0, 1]");
  require(!eta || *eta >= 0, "eta must be non-negative");
  require(min_channels >= 1, "min_channels must be at least 1");
  require(flops_per_mac >= 1, "flops_per_mac must be at least 1");
  require(max_iterations >= 1, "max_iterations must be at least 1");
}

double constraint_value(const std::vector<double>& delta, std::size_t task, DropMetric metric) {
  if (metric == DropMetric::linf) return std::abs(delta.at(task));
  return perf_drop(delta, metric).value;
}

SensitivityProbe detect_sensitive_task(LossOracle& oracle, const ModelGraph& g,
                                       const ChannelGroups& groups,
                                       const std::vector<GroupId>& ascending, double gamma,
                                       const TaskLossVector& baseline) {
  if (ascending.empty()) throw Error(ErrorKind::invalid_argument, "layer has no prunable groups");
  const auto k = static_cast<double>(ascending.size());
  const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(gamma * k)), 1,
                                             ascending.size());
  const std::set<GroupId> mask(ascending.begin(), ascending.begin() + static_cast<std::ptrdiff_t>(count));
  SensitivityProbe probe;
  probe.losses = oracle.evaluate(g, groups, mask);
  probe.delta = relative_change(baseline, probe.losses).delta;
  probe.task = perf_drop(probe.delta, DropMetric::linf).argmax_task;
  probe.no_sensitivity =
      std::all_of(probe.delta.begin(), probe.delta.end(), [](double d) { return d == 0.0; });
  return probe;
}

GreedyResult prune_layer_greedy(LossOracle& oracle, const ModelGraph& g, const ChannelGroups& groups,
                                const std::vector<GroupId>& ascending, std::int64_t chunk,
                                std::int64_t cap, double threshold, std::size_t sensitive_task,
                                const TaskLossVector& baseline, DropMetric metric) {
  if (chunk < 1) throw Error(ErrorKind::invalid_argument, "chunk must be positive");
  GreedyResult result;
  result.losses = baseline;
  cap = std::clamp<std::int64_t>(cap, 0, static_cast<std::int64_t>(ascending.size()));
  std::int64_t accepted = 0;
  while (accepted < cap) {
    const auto next = std::min(accepted + chunk, cap);
    const std::set<GroupId> mask(ascending.begin(), ascending.begin() + next);
    auto losses = oracle.evaluate(g, groups, mask);
    ++result.evaluations;
    const double value = constraint_value(relative_change(baseline, losses).delta, sensitive_task, metric);
    if (value > threshold) break;
    accepted = next;
    result.achieved_drop = value;
    result.losses = std::move(losses);
  }
  result.dropped.assign(ascending.begin(), ascending.begin() + accepted);
  result.ratio = ascending.empty() ? 0.0
                                   : static_cast<double>(accepted) / static_cast<double>(ascending.size());
  return result;
}

TopPSelection filter_top_p(const ModelGraph& g0, const ChannelGroups& groups0,
                           const std::vector<LayerDecision>& decisions, double P,
                           std::int64_t flops_per_mac) {
  TopPSelection sel;
  const auto base = count_cost(g0, flops_per_mac).total_flops;
  std::vector<std::string> layers;
  std::map<std::string, const LayerDecision*> by_layer;
  for (const auto& d : decisions) {
    std::int64_t c = 0;
    if (!d.dropped.empty()) {
      const std::set<GroupId> dropped(d.dropped.begin(), d.dropped.end());
      c = base - count_cost(apply_pruning(g0, groups0, dropped, 1), flops_per_mac).total_flops;
    }
    sel.contributions[d.layer] = c;
    layers.push_back(d.layer);
    by_layer[d.layer] = &d;
  }
  const auto ordered = order_by_contribution(layers, sel.contributions, true);
  const auto keep = std::min(ordered.size(), static_cast<std::size_t>(
                                                 std::ceil(P * static_cast<double>(ordered.size()) - 1e-12)));
  std::set<GroupId> dropped;
  for (std::size_t i = 0; i < keep; ++i) {
    sel.selected.push_back(ordered[i]);
    const auto& d = *by_layer.at(ordered[i]);
    dropped.insert(d.dropped.begin(), d.dropped.end());
  }
  sel.rebuilt = dropped.empty() ? g0 : apply_pruning(g0, groups0, dropped, 1);
  return sel;
}

std::map<std::string, std::int64_t> producer_widths(const ModelGraph& g) {
  std::map<std::string, std::int64_t> out;
  for (const auto& n : g.nodes) {
    if (is_producer(n.op)) out[n.id] = producer_out_channels(g, n);
  }
  return out;
}

double reserved_ratio(const CostReport& now, const CostReport& initial, TargetMetric metric) {
  const auto num = metric == TargetMetric::flops ? now.total_flops : now.total_params;
  const auto den = metric == TargetMetric::flops ? initial.total_flops : initial.total_params;
  if (den <= 0) throw Error(ErrorKind::invalid_argument, "initial cost is zero");
  return static_cast<double>(num) / static_cast<double>(den);
}

namespace {

/// Group id in `groups` of the layer's group whose lead channel is `channel`.
std::map<std::int64_t, GroupId> lead_index(const ChannelGroups& groups, const std::string& layer) {
  std::map<std::int64_t, GroupId> out;
  for (auto id : groups.layer_groups(layer)) out[lead_channel(groups, groups.group(id))] = id;
  return out;
}

/// Evaluations on one graph are memoized by mask; the greedy loop and the
/// detection probe often ask for the same set.
class MemoOracle : public LossOracle {
 public:
  explicit MemoOracle(LossOracle& inner) : inner_(inner) {}
  std::vector<std::string> task_names() const override { return inner_.task_names(); }
  TaskLossVector evaluate(const ModelGraph& g, const ChannelGroups& groups,
                          const std::set<GroupId>& mask) override {
    if (&g != graph_ || generation_ != seen_generation_) {
      memo_.clear();
      graph_ = &g;
      seen_generation_ = generation_;
    }
    if (auto it = memo_.find(mask); it != memo_.end()) return it->second;
    auto v = inner_.evaluate(g, groups, mask);
    memo_.emplace(mask, v);
    return v;
  }
  void invalidate() { ++generation_; }

 private:
  LossOracle& inner_;
  const ModelGraph* graph_ = nullptr;
  std::int64_t generation_ = 0;
  std::int64_t seen_generation_ = -1;
  std::map<std::set<GroupId>, TaskLossVector> memo_;
};

}  // namespace

PruneResult run_pagcp(const ModelGraph& g0, LossOracle& oracle, const PagcpConfig& config,
                      const std::set<std::string>& exclusions, const RunHooks& hooks,
                      const PruningPlan* resume, const ModelGraph* resume_graph) {
  config.check();
  MemoOracle memo(oracle);
  const auto fpm = config.flops_per_mac;

  PruningPlan plan;
  ModelGraph g = g0;
  if (resume) {
    if (!resume_graph) throw Error(ErrorKind::invalid_argument, "resume needs the current graph");
    plan = *resume;
    g = *resume_graph;
  } else {
    plan.config = config;
    plan.exclusions = exclusions;
    plan.source_hash = graph_fingerprint(g0);
    plan.tasks = oracle.task_names();
    plan.initial_cost = count_cost(g0, fpm);
    plan.initial_widths = producer_widths(g0);
    const auto groups0 = build_channel_groups(g0, exclusions);
    plan.initial_losses = memo.evaluate(g, groups0, {});
    if (hooks.on_iteration) hooks.on_iteration(plan, g);
  }
  plan.status = RunStatus::running;

  std::int64_t run_here = 0;
  while (true) {
    const auto cost = count_cost(g, fpm);
    plan.reserved_ratio = reserved_ratio(cost, plan.initial_cost, config.target_metric);
    if (plan.reserved_ratio <= config.Gamma) {
      plan.status = RunStatus::target_reached;
      break;
    }
    const auto groups = build_channel_groups(g, exclusions);
    if (config.eta && static_cast<std::int64_t>(groups.unpinned_count()) <= *config.eta) {
      plan.status = RunStatus::eta_reached;
      break;
    }
    if (hooks.stop_after_iterations && run_here >= *hooks.stop_after_iterations) {
      plan.status = RunStatus::interrupted;
      break;
    }
    if (static_cast<std::int64_t>(plan.iterations.size()) >= config.max_iterations) {
      plan.status = RunStatus::iteration_limit;
      break;
    }

    IterationRecord it;
    it.index = static_cast<std::int64_t>(plan.iterations.size());
    it.cost_before = cost;
    const auto saliency = filter_l1_saliency(g, groups);
    std::vector<std::string> layers;
    for (const auto& layer : groups.layers()) {
      if (max_droppable(g, groups, layer, config.min_channels) > 0) layers.push_back(layer);
    }
    it.prunable_layers = static_cast<std::int64_t>(layers.size());
    if (layers.empty()) {
      plan.status = RunStatus::stalled;
      break;
    }
    if (layers.size() == 1) {
      it.lambda = 1.0;
      it.thresholds = {config.alpha - 1.0};
    } else {
      const auto schedule = ThresholdSchedule::make(config.alpha, config.d1, it.prunable_layers);
      it.lambda = schedule.lambda;
      it.thresholds = schedule.thresholds;
    }
    it.order = rank_layers(g, groups, saliency, layers, config.probe_ratio, it.lambda,
                           config.min_channels, fpm);
    spdlog::info("iteration {}: {} layers, lambda {:.6f}, reserved {:.4f}", it.index,
                 it.prunable_layers, it.lambda, plan.reserved_ratio);

    auto baseline = memo.evaluate(g, groups, {});
    it.loss_trajectory.push_back(baseline);
    ModelGraph current = g;
    ChannelGroups current_groups = groups;
    for (std::size_t i = 0; i < it.order.sequence.size(); ++i) {
      const auto& layer = it.order.sequence[i];
      LayerDecision d;
      d.layer = layer;
      d.threshold = it.thresholds[i];
      const auto start_ids = saliency.ascending(groups.layer_groups(layer));
      d.total_groups = static_cast<std::int64_t>(start_ids.size());
      const auto index = lead_index(current_groups, layer);
      std::vector<GroupId> ids;
      std::map<GroupId, GroupId> to_start;
      for (auto sid : start_ids) {
        const auto cid = index.at(lead_channel(groups, groups.group(sid)));
        ids.push_back(cid);
        to_start[cid] = sid;
      }
      const auto cap = max_droppable(current, current_groups, layer, config.min_channels);
      const auto chunk = std::max<std::int64_t>(
          1, static_cast<std::int64_t>(std::ceil(config.gamma * static_cast<double>(ids.size()))));

      const auto probe = detect_sensitive_task(memo, current, current_groups, ids, config.gamma, baseline);
      d.sensitive_task = probe.task;
      d.sensitive_task_name = plan.tasks.at(probe.task);
      d.no_sensitivity = probe.no_sensitivity;
      d.masked_delta = probe.delta;
      if (probe.no_sensitivity) spdlog::warn("layer {}: masking changed no task loss", layer);

      const auto greedy = prune_layer_greedy(memo, current, current_groups, ids, chunk, cap, d.threshold,
                                             probe.task, baseline, config.drop_metric);
      d.evaluations = greedy.evaluations + 1;
      d.ratio = greedy.ratio;
      d.achieved_drop = greedy.achieved_drop;
      d.baseline = baseline;
      d.losses = greedy.losses;
      for (auto cid : greedy.dropped) {
        const auto sid = to_start.at(cid);
        d.dropped.push_back(sid);
        d.channels.push_back(lead_channel(groups, groups.group(sid)));
      }
      spdlog::debug("layer {}: task {}, dropped {}/{}, drop {:.6f} <= {:.6f}", layer,
                    d.sensitive_task_name, d.dropped.size(), d.total_groups, d.achieved_drop, d.threshold);
      if (!greedy.dropped.empty()) {
        const std::set<GroupId> drop(greedy.dropped.begin(), greedy.dropped.end());
        current = apply_pruning(current, current_groups, drop, config.min_channels);
        current_groups = build_channel_groups(current, exclusions);
        memo.invalidate();
        baseline = greedy.losses;
        it.loss_trajectory.push_back(baseline);
      }
      it.layer_decisions.push_back(std::move(d));
    }

    auto selection = filter_top_p(g, groups, it.layer_decisions, config.P, fpm);
    it.contributions = selection.contributions;
    it.selected_top_p = selection.selected;
    ModelGraph next = std::move(selection.rebuilt);
    const bool changed = count_cost(next, fpm) != cost;
    if (changed && hooks.finetune) {
      next = hooks.finetune(next, it.index);
      it.finetuned = true;
    }
    memo.invalidate();
    const auto next_groups = build_channel_groups(next, exclusions);
    it.loss_trajectory.push_back(memo.evaluate(next, next_groups, {}));
    it.cost_after = count_cost(next, fpm);
    it.widths = producer_widths(next);
    it.reserved_ratio = reserved_ratio(it.cost_after, plan.initial_cost, config.target_metric);
    plan.iterations.push_back(std::move(it));
    g = std::move(next);
    ++run_here;
    if (hooks.on_iteration) hooks.on_iteration(plan, g);
    if (!changed) {
      plan.status = RunStatus::stalled;
      break;
    }
  }

  plan.final_cost = count_cost(g, fpm);
  plan.reserved_ratio = reserved_ratio(plan.final_cost, plan.initial_cost, config.target_metric);
  memo.invalidate();
  plan.final_losses = memo.evaluate(g, build_channel_groups(g, exclusions), {});
  return {std::move(g), std::move(plan)};
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json config_json(const PagcpConfig& c) {
  json j;
  j["alpha"] = c.alpha;
  j["d1"] = c.d1;
  j["gamma"] = c.gamma;
  j["P"] = c.P;
  j["probe_ratio"] = c.probe_ratio;
  j["Gamma"] = c.Gamma;
  j["target_metric"] = std::string(to_string(c.target_metric));
  j["eta"] = c.eta ? json(*c.eta) : json(nullptr);
  j["drop_metric"] = std::string(to_string(c.drop_metric));
  j["min_channels"] = c.min_channels;
  j["seed"] = c.seed;
  j["flops_per_mac"] = c.flops_per_mac;
  j["max_iterations"] = c.max_iterations;
  return j;
}

PagcpConfig config_from(const json& j) {
  PagcpConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.d1 = j.at("d1").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.P = j.at("P").get<double>();
  c.probe_ratio = j.at("probe_ratio").get<double>();
  c.Gamma = j.at("Gamma").get<double>();
  c.target_metric = target_metric_from_name(j.at("target_metric").get<std::string>()).value();
  if (!j.at("eta").is_null()) c.eta = j.at("eta").get<std::int64_t>();
  c.drop_metric = drop_metric_from_name(j.at("drop_metric").get<std::string>()).value();
  c.min_channels = j.at("min_channels").get<std::int64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.flops_per_mac = j.at("flops_per_mac").get<std::int64_t>();
  c.max_iterations = j.at("max_iterations").get<std::int64_t>();
  return c;
}

json losses_json(const TaskLossVector& v) {
  return {{"tasks", v.tasks}, {"values", v.values}, {"batch_id", v.batch_id}};
}

TaskLossVector losses_from(const json& j) {
  TaskLossVector v;
  v.tasks = j.at("tasks").get<std::vector<std::string>>();
  v.values = j.at("values").get<std::vector<double>>();
  v.batch_id = j.at("batch_id").get<std::string>();
  return v;
}

json cost_json(const CostReport& c) {
  json nodes = json::array();
  for (const auto& n : c.per_layer) {
    nodes.push_back({{"node", n.node_id}, {"flops", n.flops}, {"params", n.params}});
  }
  return {{"flops", c.total_flops}, {"params", c.total_params}, {"nodes", nodes}};
}

CostReport cost_from(const json& j) {
  CostReport c;
  c.total_flops = j.at("flops").get<std::int64_t>();
  c.total_params = j.at("params").get<std::int64_t>();
  for (const auto& n : j.at("nodes")) {
    c.per_layer.push_back({n.at("node").get<std::string>(), n.at("flops").get<std::int64_t>(),
                           n.at("params").get<std::int64_t>()});
  }
  return c;
}

json decision_json(const LayerDecision& d) {
  json j;
  j["layer"] = d.layer;
  j["sensitive_task"] = d.sensitive_task;
  j["sensitive_task_name"] = d.sensitive_task_name;
  j["no_sensitivity"] = d.no_sensitivity;
  j["masked_delta"] = d.masked_delta;
  j["dropped_groups"] = d.dropped;
  j["dropped_channels"] = d.channels;
  j["total_groups"] = d.total_groups;
  j["ratio"] = d.ratio;
  j["threshold"] = d.threshold;
  j["achieved_drop"] = d.achieved_drop;
  j["baseline"] = losses_json(d.baseline);
  j["losses"] = losses_json(d.losses);
  j["evaluations"] = d.evaluations;
  return j;
}

LayerDecision decision_from(const json& j) {
  LayerDecision d;
  d.layer = j.at("layer").get<std::string>();
  d.sensitive_task = j.at("sensitive_task").get<std::size_t>();
  d.sensitive_task_name = j.at("sensitive_task_name").get<std::string>();
  d.no_sensitivity = j.at("no_sensitivity").get<bool>();
  d.masked_delta = j.at("masked_delta").get<std::vector<double>>();
  d.dropped = j.at("dropped_groups").get<std::vector<GroupId>>();
  d.channels = j.at("dropped_channels").get<std::vector<std::int64_t>>();
  d.total_groups = j.at("total_groups").get<std::int64_t>();
  d.ratio = j.at("ratio").get<double>();
  d.threshold = j.at("threshold").get<double>();
  d.achieved_drop = j.at("achieved_drop").get<double>();
  d.baseline = losses_from(j.at("baseline"));
  d.losses = losses_from(j.at("losses"));
  d.evaluations = j.at("evaluations").get<std::int64_t>();
  return d;
}

json iteration_json(const IterationRecord& it) {
  json j;
  j["index"] = it.index;
  j["prunable_layers"] = it.prunable_layers;
  j["lambda"] = it.lambda;
  j["thresholds"] = it.thresholds;
  j["order"] = {{"sequence", it.order.sequence},
                {"probe_ratio", it.order.probe_ratio},
                {"contributions", it.order.contributions}};
  json decisions = json::array();
  for (const auto& d : it.layer_decisions) decisions.push_back(decision_json(d));
  j["layer_decisions"] = decisions;
  j["contributions"] = it.contributions;
  j["selected_top_p"] = it.selected_top_p;
  j["cost_before"] = cost_json(it.cost_before);
  j["cost_after"] = cost_json(it.cost_after);
  json traj = json::array();
  for (const auto& v : it.loss_trajectory) traj.push_back(losses_json(v));
  j["loss_trajectory"] = traj;
  j["widths"] = it.widths;
  j["reserved_ratio"] = it.reserved_ratio;
  j["finetuned"] = it.finetuned;
  return j;
}

IterationRecord iteration_from(const json& j) {
  IterationRecord it;
  it.index = j.at("index").get<std::int64_t>();
  it.prunable_layers = j.at("prunable_layers").get<std::int64_t>();
  it.lambda = j.at("lambda").get<double>();
  it.thresholds = j.at("thresholds").get<std::vector<double>>();
  const auto& o = j.at("order");
  it.order.sequence = o.at("sequence").get<std::vector<std::string>>();
  it.order.probe_ratio = o.at("probe_ratio").get<double>();
  it.order.contributions = o.at("contributions").get<std::map<std::string, std::int64_t>>();
  for (const auto& d : j.at("layer_decisions")) it.layer_decisions.push_back(decision_from(d));
  it.contributions = j.at("contributions").get<std::map<std::string, std::int64_t>>();
  it.selected_top_p = j.at("selected_top_p").get<std::vector<std::string>>();
  it.cost_before = cost_from(j.at("cost_before"));
  it.cost_after = cost_from(j.at("cost_after"));
  for (const auto& v : j.at("loss_trajectory")) it.loss_trajectory.push_back(losses_from(v));
  it.widths = j.at("widths").get<std::map<std::string, std::int64_t>>();
  it.reserved_ratio = j.at("reserved_ratio").get<double>();
  it.finetuned = j.at("finetuned").get<bool>();
  return it;
}

}  // namespace

json to_json(const PruningPlan& plan) {
  json j;
  j["format"] = "pagcp-plan/1";
  j["config"] = config_json(plan.config);
  j["exclusions"] = plan.exclusions;
  j["source_hash"] = plan.source_hash;
  j["tasks"] = plan.tasks;
  j["initial_cost"] = cost_json(plan.initial_cost);
  j["initial_widths"] = plan.initial_widths;
  j["initial_losses"] = losses_json(plan.initial_losses);
  json its = json::array();
  for (const auto& it : plan.iterations) its.push_back(iteration_json(it));
  j["iterations"] = its;
  j["status"] = std::string(to_string(plan.status));
  j["final_cost"] = cost_json(plan.final_cost);
  j["final_losses"] = losses_json(plan.final_losses);
  j["reserved_ratio"] = plan.reserved_ratio;
  return j;
}

PruningPlan plan_from_json(const json& j) {
  try {
    if (j.at("format").get<std::string>() != "pagcp-plan/1") {
      throw Error(ErrorKind::config, "unsupported plan format");
    }
    PruningPlan plan;
    plan.config = config_from(j.at("config"));
    plan.exclusions = j.at("exclusions").get<std::set<std::string>>();
    plan.source_hash = j.at("source_hash").get<std::string>();
    plan.tasks = j.at("tasks").get<std::vector<std::string>>();
    plan.initial_cost = cost_from(j.at("initial_cost"));
    plan.initial_widths = j.at("initial_widths").get<std::map<std::string, std::int64_t>>();
    plan.initial_losses = losses_from(j.at("initial_losses"));
    for (const auto& it : j.at("iterations")) plan.iterations.push_back(iteration_from(it));
    plan.status = run_status_from_name(j.at("status").get<std::string>());
    plan.final_cost = cost_from(j.at("final_cost"));
    plan.final_losses = losses_from(j.at("final_losses"));
    plan.reserved_ratio = j.at("reserved_ratio").get<double>();
    return plan;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("malformed plan: ") + e.what());
  } catch (const std::bad_optional_access&) {
    throw Error(ErrorKind::config, "malformed plan: unknown metric name");
  }
}

std::string plan_text(const PruningPlan& plan) { return to_json(plan).dump(2) + "\n"; }

std::vector<std::string> verify_plan(const PruningPlan& plan) {
  std::vector<std::string> issues;
  auto fail = [&](const std::string& where, const std::string& what) { issues.push_back(where + ": " + what); };
  const auto& c = plan.config;
  auto prev = plan.initial_cost;
  for (const auto& it : plan.iterations) {
    const auto where = "iteration " + std::to_string(it.index);
    if (static_cast<std::int64_t>(it.thresholds.size()) != it.prunable_layers) {
      fail(where, "threshold count differs from layer count");
    }
    for (std::size_t i = 1; i < it.thresholds.size(); ++i) {
      const double expect = it.thresholds[i - 1] * it.lambda;
      if (std::abs(it.thresholds[i] - expect) > 1e-12 * std::max(1.0, std::abs(expect))) {
        fail(where, "thresholds are not geometric at " + std::to_string(i));
      }
    }
    if (it.prunable_layers >= 2) {
      const double prod = threshold_product(c.d1, it.lambda, it.prunable_layers);
      if (std::abs(prod - c.alpha) > 1e-9 * c.alpha) fail(where, "threshold product differs from alpha");
    }
    if (it.layer_decisions.size() != it.order.sequence.size()) fail(where, "decision count differs from order");
    for (std::size_t i = 0; i < it.layer_decisions.size(); ++i) {
      const auto& d = it.layer_decisions[i];
      const auto at = where + " layer " + d.layer;
      if (d.layer != it.order.sequence[i]) fail(at, "visited out of order");
      if (i < it.thresholds.size() && d.threshold != it.thresholds[i]) fail(at, "threshold mismatch");
      if (d.dropped.size() != d.channels.size()) fail(at, "group and channel lists differ in length");
      const double ratio = d.total_groups ? static_cast<double>(d.dropped.size()) / static_cast<double>(d.total_groups) : 0.0;
      if (std::abs(ratio - d.ratio) > 1e-12) fail(at, "ratio inconsistent with dropped count");
      if (d.dropped.empty()) continue;
      const double value = constraint_value(relative_change(d.baseline, d.losses).delta, d.sensitive_task, c.drop_metric);
      if (value > d.threshold) fail(at, "accepted drop exceeds its threshold");
      if (std::abs(value - d.achieved_drop) > 1e-12 * std::max(1.0, value)) fail(at, "achieved drop not reproducible");
    }
    if (it.cost_after.total_flops > prev.total_flops || it.cost_after.total_params > prev.total_params) {
      fail(where, "cost increased");
    }
    for (const auto& [node, w] : it.widths) {
      if (w < c.min_channels) fail(where, node + " below min_channels");
    }
    prev = it.cost_after;
  }
  return issues;
}

}  // namespace pagcp
