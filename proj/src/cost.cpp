#include "pagcp/cost.hpp"

namespace pagcp {

std::int64_t node_flops(const ModelGraph& g, const Node& n, std::int64_t flops_per_mac) {
  const Shape& out = g.shapes.at(n.outputs.at(0));
  switch (n.op) {
    case OpKind::conv: {
      const Shape& w = g.weights.at(n.inputs[1]).shape();
      // w = [Cout, Cin/groups, kH, kW]
      return flops_per_mac * w[2] * w[3] * w[1] * w[0] * out[2] * out[3];
    }
    case OpKind::gemm:
    case OpKind::matmul: {
      const Shape& in = g.shapes.at(n.inputs[0]);
      return flops_per_mac * in[1] * out[1];
    }
    case OpKind::batch_norm:
    case OpKind::relu:
    case OpKind::max_pool:
    case OpKind::average_pool:
    case OpKind::global_average_pool:
    case OpKind::add:
      return numel(out);
    case OpKind::concat:
    case OpKind::flatten:
    case OpKind::reshape:
    case OpKind::opaque:
      return 0;
  }
  return 0;
}

std::int64_t node_params(const ModelGraph& g, const Node& n) {
  std::int64_t total = 0;
  for (const auto& ref : g.weight_refs(n)) total += g.weights.at(ref).size();
  return total;
}

CostReport count_cost(const ModelGraph& g, std::int64_t flops_per_mac) {
  if (g.shapes.empty()) throw Error(ErrorKind::invalid_argument, "graph has no inferred shapes");
  CostReport report;
  report.per_layer.reserve(g.nodes.size());
  for (const auto& n : g.nodes) {
    NodeCost c{n.id, node_flops(g, n, flops_per_mac), node_params(g, n)};
    report.total_flops += c.flops;
    report.total_params += c.params;
    report.per_layer.push_back(std::move(c));
  }
  return report;
}

}  // namespace pagcp
