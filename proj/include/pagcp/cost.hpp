#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pagcp/graph.hpp"

namespace pagcp {

struct NodeCost {
  std::string node_id;
  std::int64_t flops = 0;
  std::int64_t params = 0;

  friend bool operator==(const NodeCost&, const NodeCost&) = default;
};

/// Per-sample (batch 1) compute and parameter totals.
struct CostReport {
  std::int64_t total_flops = 0;
  std::int64_t total_params = 0;
  std::vector<NodeCost> per_layer;  // one entry per node, graph order

  friend bool operator==(const CostReport&, const CostReport&) = default;
};

/// FLOPs of a single node. Convolution and dense nodes count
/// `flops_per_mac` per multiply-accumulate; normalization, activation, pooling
/// and add count one per output element; concat and reshapes are free.
std::int64_t node_flops(const ModelGraph& g, const Node& n, std::int64_t flops_per_mac = 2);

std::int64_t node_params(const ModelGraph& g, const Node& n);

CostReport count_cost(const ModelGraph& g, std::int64_t flops_per_mac = 2);

}  // namespace pagcp
