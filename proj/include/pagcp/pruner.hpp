#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pagcp/cost.hpp"
#include "pagcp/oracle.hpp"
#include "pagcp/saliency.hpp"
#include "pagcp/scheduler.hpp"

namespace pagcp {

enum class TargetMetric { flops, params };

std::string_view to_string(TargetMetric metric);
std::optional<TargetMetric> target_metric_from_name(std::string_view name);

struct PagcpConfig {
  double alpha = 6.0;
  double d1 = 0.06;
  double gamma = 0.05;        // masking ratio
  double P = 0.8;             // filtering ratio
  double probe_ratio = 0.3;
  double Gamma = 0.6;         // reserved ratio target
  TargetMetric target_metric = TargetMetric::flops;
  std::optional<std::int64_t> eta;  // stop once this few prunable groups remain
  DropMetric drop_metric = DropMetric::linf;
  std::int64_t min_channels = 1;
  std::uint64_t seed = 0;
  std::int64_t flops_per_mac = 2;
  std::int64_t max_iterations = 100;

  /// Throws ErrorKind::config on out-of-range values.
  void check() const;
};

struct SensitivityProbe {
  std::size_t task = 0;
  bool no_sensitivity = false;  // every masked delta was zero
  std::vector<double> delta;
  TaskLossVector losses;
};

/// Masks the ceil(gamma * K) lowest-saliency groups of a layer (`ascending`
/// lists the layer's groups by saliency) and returns the task whose loss
/// moved most relative to `baseline`.
SensitivityProbe detect_sensitive_task(LossOracle& oracle, const ModelGraph& g,
                                       const ChannelGroups& groups,
                                       const std::vector<GroupId>& ascending, double gamma,
                                       const TaskLossVector& baseline);

/// Value compared against d_i: |delta[task]| for linf, else the metric of
/// the whole delta vector.
double constraint_value(const std::vector<double>& delta, std::size_t task, DropMetric metric);

struct GreedyResult {
  std::vector<GroupId> dropped;  // prefix of `ascending`
  double achieved_drop = 0.0;
  double ratio = 0.0;            // dropped / K
  TaskLossVector losses;         // at the accepted mask (baseline if none)
  std::int64_t evaluations = 0;
};

/// Grows the mask over `ascending` in chunks of `chunk` groups, stopping
/// before the first chunk whose constraint value exceeds `threshold` or once
/// `cap` groups are masked.
GreedyResult prune_layer_greedy(LossOracle& oracle, const ModelGraph& g, const ChannelGroups& groups,
                                const std::vector<GroupId>& ascending, std::int64_t chunk,
                                std::int64_t cap, double threshold, std::size_t sensitive_task,
                                const TaskLossVector& baseline, DropMetric metric);

struct LayerDecision {
  std::string layer;
  std::size_t sensitive_task = 0;
  std::string sensitive_task_name;
  bool no_sensitivity = false;
  std::vector<double> masked_delta;
  std::vector<GroupId> dropped;        // group ids of the iteration's starting graph
  std::vector<std::int64_t> channels;  // output channels of the layer's first producer
  std::int64_t total_groups = 0;       // K_l
  double ratio = 0.0;                  // R_l
  double threshold = 0.0;              // d_i
  double achieved_drop = 0.0;
  TaskLossVector baseline;
  TaskLossVector losses;
  std::int64_t evaluations = 0;
};

struct TopPSelection {
  std::vector<std::string> selected;
  std::map<std::string, std::int64_t> contributions;  // FLOPs reduction at R_l on g0
  ModelGraph rebuilt;
};

/// Keeps the ceil(P * |decisions|) layers with the largest contribution
/// (ties by layer id) and re-applies only their drops to `g0`.
TopPSelection filter_top_p(const ModelGraph& g0, const ChannelGroups& groups0,
                           const std::vector<LayerDecision>& decisions, double P,
                           std::int64_t flops_per_mac = 2);

struct IterationRecord {
  std::int64_t index = 0;
  std::int64_t prunable_layers = 0;  // L
  double lambda = 1.0;
  std::vector<double> thresholds;
  LayerOrder order;
  std::vector<LayerDecision> layer_decisions;
  std::map<std::string, std::int64_t> contributions;
  std::vector<std::string> selected_top_p;
  CostReport cost_before;
  CostReport cost_after;
  std::vector<TaskLossVector> loss_trajectory;
  std::map<std::string, std::int64_t> widths;  // producer output channels after the iteration
  double reserved_ratio = 1.0;
  bool finetuned = false;
};

enum class RunStatus { running, target_reached, eta_reached, stalled, iteration_limit, interrupted };

std::string_view to_string(RunStatus status);

struct PruningPlan {
  PagcpConfig config;
  std::set<std::string> exclusions;
  std::string source_hash;
  std::vector<std::string> tasks;
  CostReport initial_cost;
  std::map<std::string, std::int64_t> initial_widths;
  TaskLossVector initial_losses;
  std::vector<IterationRecord> iterations;
  RunStatus status = RunStatus::running;
  CostReport final_cost;
  TaskLossVector final_losses;
  double reserved_ratio = 1.0;
};

nlohmann::json to_json(const PruningPlan& plan);
PruningPlan plan_from_json(const nlohmann::json& j);

/// Canonical plan text: sorted keys, two-space indent, trailing newline.
std::string plan_text(const PruningPlan& plan);

/// Output channels of every producer node.
std::map<std::string, std::int64_t> producer_widths(const ModelGraph& g);

double reserved_ratio(const CostReport& now, const CostReport& initial, TargetMetric metric);

struct RunHooks {
  /// Called with the plan so far and the current graph once set up and after
  /// every iteration.
  std::function<void(const PruningPlan&, const ModelGraph&)> on_iteration;
  /// Optional retraining step; must return a graph with identical topology.
  std::function<ModelGraph(const ModelGraph&, std::int64_t iteration)> finetune;
  /// Stop (status interrupted) after this many iterations in this call.
  std::optional<std::int64_t> stop_after_iterations;
};

struct PruneResult {
  ModelGraph graph;
  PruningPlan plan;
};

/// Full outer loop. With `resume` set, continues that plan from `resume_graph`.
PruneResult run_pagcp(const ModelGraph& g0, LossOracle& oracle, const PagcpConfig& config,
                      const std::set<std::string>& exclusions, const RunHooks& hooks = {},
                      const PruningPlan* resume = nullptr, const ModelGraph* resume_graph = nullptr);

/// Post-hoc checks of a finished plan: every accepted drop within its
/// threshold and reproducible from the recorded losses, thresholds
/// geometric, ratios consistent, costs non-increasing. Returns violations.
std::vector<std::string> verify_plan(const PruningPlan& plan);

}  // namespace pagcp
