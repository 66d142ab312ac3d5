#include "pagcp/pruning.hpp"

#include <algorithm>

namespace pagcp {

namespace {

void slice(ModelGraph& g, const std::string& tensor, std::int64_t axis,
           const std::vector<std::int64_t>& dropped) {
  auto& t = g.weights.at(tensor);
  const auto keep = kept_indices(t.dim(axis), dropped);
  t = take_along_axis(t, axis, std::span<const std::int64_t>(keep));
}

bool has_input(const Node& n, std::size_t i) { return n.inputs.size() > i && !n.inputs[i].empty(); }

void prune_outputs(ModelGraph& g, const Node& n, const std::vector<std::int64_t>& channels) {
  switch (n.op) {
    case OpKind::conv:
      slice(g, n.inputs[1], 0, channels);
      if (has_input(n, 2)) slice(g, n.inputs[2], 0, channels);
      break;
    case OpKind::gemm:
      slice(g, n.inputs[1], n.attr_int("transB", 0) != 0 ? 0 : 1, channels);
      if (has_input(n, 2)) {
        slice(g, n.inputs[2], g.weights.at(n.inputs[2]).rank() - 1, channels);
      }
      break;
    case OpKind::matmul:
      slice(g, n.inputs[1], 1, channels);
      break;
    default:
      throw Error(ErrorKind::invalid_argument, "node is not a channel producer", n.id);
  }
}

void prune_inputs(ModelGraph& g, const Node& n, const std::vector<std::int64_t>& channels) {
  switch (n.op) {
    case OpKind::conv:
      slice(g, n.inputs[1], 1, channels);
      break;
    case OpKind::gemm:
      slice(g, n.inputs[1], n.attr_int("transB", 0) != 0 ? 1 : 0, channels);
      break;
    case OpKind::matmul:
      slice(g, n.inputs[1], 0, channels);
      break;
    default:
      throw Error(ErrorKind::invalid_argument, "node does not consume channels", n.id);
  }
}

void prune_norm(ModelGraph& g, const Node& n, const std::vector<std::int64_t>& channels) {
  if (n.op == OpKind::batch_norm) {
    for (std::size_t i = 1; i < 5; ++i) slice(g, n.inputs[i], 0, channels);
    return;
  }
  if (n.op == OpKind::add) {
    const std::size_t ci = g.is_weight(n.inputs[0]) ? 0 : 1;
    const Shape& out = g.shapes.at(n.outputs[0]);
    const auto& c = g.weights.at(n.inputs[ci]);
    const std::int64_t axis = c.rank() - (static_cast<std::int64_t>(out.size()) - 1);
    slice(g, n.inputs[ci], axis, channels);
    return;
  }
  throw Error(ErrorKind::invalid_argument, "node has no per-channel parameters", n.id);
}

}  // namespace

std::int64_t max_droppable(const ModelGraph& g, const ChannelGroups& groups,
                           const std::string& layer, std::int64_t min_channels) {
  const auto ids = groups.layer_groups(layer);
  std::int64_t room = static_cast<std::int64_t>(ids.size());
  for (const auto& p : groups.layer_producers(layer)) {
    room = std::min(room, producer_out_channels(g, g.node(p)) - min_channels);
  }
  return std::max<std::int64_t>(room, 0);
}

ModelGraph apply_pruning(const ModelGraph& g, const ChannelGroups& groups,
                         const std::set<GroupId>& dropped, std::int64_t min_channels) {
  if (dropped.empty()) return g;

  std::map<std::string, std::vector<std::int64_t>> out_drop, in_drop, norm_drop;
  for (GroupId id : dropped) {
    const ChannelGroup& group = groups.group(id);
    if (group.pinned) {
      throw Error(ErrorKind::pinned_group, "group " + std::to_string(id) + " of layer " +
                                               group.layer + " is pinned");
    }
    for (const auto& s : group.slots) {
      auto& target = s.role == AxisRole::producer_out  ? out_drop
                     : s.role == AxisRole::consumer_in ? in_drop
                                                       : norm_drop;
      target[s.node_id].push_back(s.channel);
    }
  }
  for (auto* m : {&out_drop, &in_drop, &norm_drop}) {
    for (auto& [_, v] : *m) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
  for (const auto& [node_id, channels] : out_drop) {
    const std::int64_t remaining =
        producer_out_channels(g, g.node(node_id)) - static_cast<std::int64_t>(channels.size());
    if (remaining < min_channels) {
      throw Error(ErrorKind::below_min_channels,
                  std::to_string(remaining) + " channels would remain, minimum is " +
                      std::to_string(min_channels),
                  node_id);
    }
  }

  ModelGraph out = g;
  for (const auto& [node_id, channels] : out_drop) prune_outputs(out, g.node(node_id), channels);
  for (const auto& [node_id, channels] : in_drop) prune_inputs(out, g.node(node_id), channels);
  for (const auto& [node_id, channels] : norm_drop) prune_norm(out, g.node(node_id), channels);
  out.shapes = infer_shapes(out);
  return out;
}

}  // namespace pagcp
