#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pagcp/channel_groups.hpp"
#include "pagcp/dataset.hpp"
#include "pagcp/forward.hpp"

namespace pagcp {

struct TaskLossVector {
  std::vector<std::string> tasks;
  std::vector<double> values;
  std::string batch_id;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t i) const { return values.at(i); }

  friend bool operator==(const TaskLossVector&, const TaskLossVector&) = default;
};

/// Per-sample losses, rows = samples, columns = tasks.
Eigen::MatrixXd per_sample_losses(const TensorMap& outputs, const Batch& batch,
                                  const std::vector<TaskSpec>& tasks);

/// Mean loss per task over every sample of `data`.
TaskLossVector evaluate_losses(const ModelGraph& g, const EvalDataset& data, const ChannelMask& mask = {});
TaskLossVector evaluate_losses(const ModelGraph& g, const EvalDataset& data,
                               const ChannelGroups& groups, const std::set<GroupId>& mask);

struct RelativeChange {
  std::vector<double> delta;
  std::vector<bool> absolute;  // base was ~0, component is new - base

  bool warned() const;
};

inline constexpr double kZeroLoss = 1e-12;

/// (new_t - base_t) / base_t per task; absolute change where base_t <= 1e-12.
RelativeChange relative_change(const TaskLossVector& base, const TaskLossVector& now);

enum class DropMetric { linf, l1_sum, l2, min };

std::string_view to_string(DropMetric metric);
std::optional<DropMetric> drop_metric_from_name(std::string_view name);

struct PerfDrop {
  double value = 0.0;
  std::size_t argmax_task = 0;  // largest |delta|, lowest index on ties
};

PerfDrop perf_drop(std::span<const double> delta, DropMetric metric = DropMetric::linf);

/// Source of per-task losses for a model with some groups masked.
class LossOracle {
 public:
  virtual ~LossOracle() = default;
  virtual std::vector<std::string> task_names() const = 0;
  virtual TaskLossVector evaluate(const ModelGraph& g, const ChannelGroups& groups,
                                  const std::set<GroupId>& mask) = 0;
};

/// SHA-256 of the exported model bytes.
std::string graph_fingerprint(const ModelGraph& g);

/// In-process oracle over the reference forward pass. Keeps the unmasked
/// activations of the last graph seen so masked evaluations only recompute
/// what a mask can reach.
class BuiltinOracle : public LossOracle {
 public:
  explicit BuiltinOracle(EvalDataset data, std::string tag = "probe", bool cache = true);

  std::vector<std::string> task_names() const override { return data_.task_names(); }
  TaskLossVector evaluate(const ModelGraph& g, const ChannelGroups& groups,
                          const std::set<GroupId>& mask) override;

  /// Per-sample loss matrix over the whole dataset.
  Eigen::MatrixXd sample_losses(const ModelGraph& g, const ChannelMask& mask);

  const EvalDataset& data() const noexcept { return data_; }
  std::int64_t evaluations() const noexcept { return evaluations_; }

 private:
  void prepare(const ModelGraph& g);

  EvalDataset data_;
  std::string tag_;
  bool use_cache_;
  std::string fingerprint_;
  std::unique_ptr<ModelGraph> graph_;
  std::vector<ForwardCache> caches_;
  std::int64_t evaluations_ = 0;
};

}  // namespace pagcp
