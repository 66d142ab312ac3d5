#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pagcp/forward.hpp"
#include "pagcp/graph.hpp"

namespace pagcp {

enum class LossKind { cross_entropy, mse, smooth_l1 };

std::string_view to_string(LossKind kind);
std::optional<LossKind> loss_kind_from_name(std::string_view name);

struct TaskSpec {
  std::string name;
  LossKind loss = LossKind::mse;
  std::string head;  // graph output feeding this task

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// One batch: graph inputs plus one target tensor per task. Classification
/// targets hold class indices as floats, shape [N].
struct Batch {
  TensorMap inputs;
  std::vector<TensorF> targets;
};

struct EvalDataset {
  std::vector<Batch> batches;
  std::vector<TaskSpec> tasks;

  std::int64_t samples() const;
  std::vector<std::string> task_names() const;

  /// Throws unless every head is a graph output and targets fit the heads.
  void check(const ModelGraph& g) const;
};

/// Directory layout: dataset.json listing tasks and per-batch tensor files
/// (ONNX TensorProto encoding).
EvalDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const EvalDataset& data, const std::filesystem::path& dir);

/// Teacher dataset for a two-head toy model: image inputs are a random plane
/// wave plus per-channel offsets and noise (flat inputs stay uniform), class targets
/// from the model's own argmax with 10% label noise, regression targets from
/// its output plus small noise.
EvalDataset make_toy_dataset(const ModelGraph& g, std::uint64_t seed, std::int64_t samples,
                             std::int64_t batch_size);

/// Seeded subset of `count` samples (all if count >= samples) as one batch,
/// samples kept in dataset order.
EvalDataset probe_subset(const EvalDataset& data, std::int64_t count, std::uint64_t seed);

}  // namespace pagcp
