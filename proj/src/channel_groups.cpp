#include "pagcp/channel_groups.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

namespace pagcp {

namespace {

/// Union-find over channel elements with a sticky `pinned` flag per class.
class ChannelClasses {
 public:
  int make(bool pinned) {
    parent_.push_back(static_cast<int>(parent_.size()));
    pinned_.push_back(pinned);
    return parent_.back();
  }

  int find(int e) {
    while (parent_[static_cast<std::size_t>(e)] != e) {
      auto& p = parent_[static_cast<std::size_t>(e)];
      p = parent_[static_cast<std::size_t>(p)];
      e = p;
    }
    return e;
  }

  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
    pinned_[static_cast<std::size_t>(a)] = pinned_[static_cast<std::size_t>(a)] || pinned_[static_cast<std::size_t>(b)];
  }

  void pin(int e) { pinned_[static_cast<std::size_t>(find(e))] = true; }
  bool pinned(int e) { return pinned_[static_cast<std::size_t>(find(e))]; }

 private:
  std::vector<int> parent_;
  std::vector<bool> pinned_;
};

std::int64_t channel_extent(const Shape& s) { return s.size() >= 2 ? s[1] : 1; }

class GroupBuilder {
 public:
  GroupBuilder(const ModelGraph& g, const std::set<std::string>& exclusions)
      : g_(g), exclusions_(exclusions) {
    find_epilogues();
  }

  ChannelGroups run() {
    for (const auto& spec : g_.input_specs) {
      elems_[spec.name] = fresh(channel_extent(g_.shapes.at(spec.name)), true);
    }
    for (const auto& n : g_.nodes) visit(n);
    for (const auto& spec : g_.output_specs) pin_all(spec.name);
    return assemble();
  }

 private:
  struct Recorded {
    int elem;
    ChannelSlot slot;
  };

  std::vector<int> fresh(std::int64_t count, bool pinned) {
    std::vector<int> out(static_cast<std::size_t>(count));
    for (auto& e : out) e = classes_.make(pinned);
    return out;
  }

  const std::vector<int>& in_elems(const Node& n, std::size_t i = 0) {
    auto it = elems_.find(n.inputs.at(i));
    if (it == elems_.end()) {
      throw Error(ErrorKind::invalid_argument, "no channel map for tensor '" + n.inputs.at(i) + "'", n.id);
    }
    return it->second;
  }

  void pin_all(const std::string& tensor) {
    auto it = elems_.find(tensor);
    if (it == elems_.end()) return;
    for (int e : it->second) classes_.pin(e);
  }

  void pin_inputs(const Node& n, const std::string& reason) {
    bool any = false;
    for (const auto& in : n.inputs) {
      if (in.empty() || g_.is_initializer(in)) continue;
      auto it = elems_.find(in);
      if (it == elems_.end()) continue;
      for (int e : it->second) {
        any = any || !classes_.pinned(e);
        classes_.pin(e);
      }
    }
    if (any && !reason.empty()) warnings_.push_back("node " + n.id + ": " + reason + "; channels pinned");
  }

  void record(int elem, std::string node_id, AxisRole role, std::int64_t channel) {
    slots_.push_back({elem, ChannelSlot{std::move(node_id), role, channel}});
  }

  // A producer's epilogue is the chain of per-channel affine nodes (batch
  // norm, constant add) that exclusively consume its output.
  void find_epilogues() {
    std::unordered_map<std::string, std::vector<std::string>> consumers;
    for (const auto& n : g_.nodes) {
      for (const auto& in : n.inputs) {
        if (!in.empty()) consumers[in].push_back(n.id);
      }
    }
    for (const auto& n : g_.nodes) {
      if (!is_producer(n.op)) continue;
      std::string tensor = n.outputs.at(0);
      while (!g_.is_graph_output(tensor)) {
        const auto& users = consumers[tensor];
        if (users.size() != 1) break;
        const Node& next = g_.node(users.front());
        const bool affine = (next.op == OpKind::batch_norm && next.inputs.at(0) == tensor) ||
                            (next.op == OpKind::add && constant_operand(next) >= 0);
        if (!affine) break;
        epilogue_of_[next.id] = n.id;
        tensor = next.outputs.at(0);
      }
      mask_tensor_[n.id] = tensor;
    }
  }

  int constant_operand(const Node& n) const {
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (g_.is_weight(n.inputs[i])) return static_cast<int>(i);
    }
    return -1;
  }

  void visit(const Node& n) {
    const bool excluded = exclusions_.contains(n.id);
    const std::string& out = n.outputs.at(0);
    const Shape& out_shape = g_.shapes.at(out);
    switch (n.op) {
      case OpKind::conv:
      case OpKind::gemm:
      case OpKind::matmul: {
        const auto& in = in_elems(n);
        if (n.op == OpKind::conv && n.attr_int("group", 1) != 1) {
          pin_inputs(n, "grouped convolution couples input and output channels");
          elems_[out] = fresh(channel_extent(out_shape), true);
          break;
        }
        for (std::size_t c = 0; c < in.size(); ++c) {
          record(in[c], n.id, AxisRole::consumer_in, static_cast<std::int64_t>(c));
        }
        auto produced = fresh(channel_extent(out_shape), excluded);
        for (std::size_t k = 0; k < produced.size(); ++k) {
          record(produced[k], n.id, AxisRole::producer_out, static_cast<std::int64_t>(k));
          masks_.push_back({produced[k], MaskPoint{mask_tensor_.at(n.id), static_cast<std::int64_t>(k)}});
        }
        elems_[out] = std::move(produced);
        break;
      }
      case OpKind::batch_norm: {
        const auto in = in_elems(n);
        for (std::size_t c = 0; c < in.size(); ++c) {
          record(in[c], n.id, AxisRole::norm_channel, static_cast<std::int64_t>(c));
        }
        if (!epilogue_of_.contains(n.id)) {
          pin_inputs(n, "normalization does not directly follow a producer");
        }
        elems_[out] = in;
        break;
      }
      case OpKind::add: {
        const int ci = constant_operand(n);
        if (ci < 0) {
          const auto a = in_elems(n, 0);
          const auto& b = in_elems(n, 1);
          for (std::size_t c = 0; c < a.size(); ++c) classes_.unite(a[c], b[c]);
          elems_[out] = a;
          break;
        }
        const std::size_t xi = ci == 0 ? 1 : 0;
        const auto in = in_elems(n, xi);
        const Shape& cs = g_.weights.at(n.inputs[static_cast<std::size_t>(ci)]).shape();
        const std::int64_t axis = static_cast<std::int64_t>(cs.size()) -
                                  (static_cast<std::int64_t>(out_shape.size()) - 1);
        const bool per_channel = axis >= 0 && cs[static_cast<std::size_t>(axis)] > 1;
        if (per_channel) {
          for (std::size_t c = 0; c < in.size(); ++c) {
            record(in[c], n.id, AxisRole::norm_channel, static_cast<std::int64_t>(c));
          }
        }
        if (!epilogue_of_.contains(n.id)) {
          pin_inputs(n, "constant add does not directly follow a producer");
        } else if (!per_channel && out_shape.size() > 2 && cs.size() >= out_shape.size() - 1 &&
                   numel(cs) > 1) {
          pin_inputs(n, "constant add varies along a non-channel axis only");
        }
        elems_[out] = in;
        break;
      }
      case OpKind::relu:
      case OpKind::max_pool:
      case OpKind::average_pool:
      case OpKind::global_average_pool:
        elems_[out] = in_elems(n);
        break;
      case OpKind::concat: {
        const auto axis = n.attr_int("axis", 1);
        const auto rank = static_cast<std::int64_t>(out_shape.size());
        if ((axis < 0 ? axis + rank : axis) != 1) {
          pin_inputs(n, "concat along a non-channel axis");
          elems_[out] = fresh(channel_extent(out_shape), true);
          break;
        }
        std::vector<int> joined;
        for (const auto& in : n.inputs) {
          concat_offsets_.push_back({n.id, in, static_cast<std::int64_t>(joined.size())});
          const auto& e = elems_.at(in);
          joined.insert(joined.end(), e.begin(), e.end());
        }
        elems_[out] = std::move(joined);
        break;
      }
      case OpKind::flatten:
      case OpKind::reshape: {
        const Shape& in_shape = g_.shapes.at(n.inputs[0]);
        if (!flatten_like(n, in_shape, out_shape)) {
          pin_inputs(n, "reshape moves the channel axis");
          elems_[out] = fresh(channel_extent(out_shape), true);
          break;
        }
        const auto& in = in_elems(n);
        std::int64_t spatial = 1;
        for (std::size_t d = 2; d < in_shape.size(); ++d) spatial *= in_shape[d];
        std::vector<int> flat;
        flat.reserve(static_cast<std::size_t>(numel(in_shape) / std::max<std::int64_t>(in_shape[0], 1)));
        for (int e : in) flat.insert(flat.end(), static_cast<std::size_t>(spatial), e);
        elems_[out] = std::move(flat);
        break;
      }
      case OpKind::opaque: {
        pin_inputs(n, "");
        for (const auto& o : n.outputs) {
          auto it = g_.shapes.find(o);
          elems_[o] = fresh(it == g_.shapes.end() ? 1 : channel_extent(it->second), true);
        }
        break;
      }
    }
    if (excluded && !is_producer(n.op)) {
      pin_inputs(n, "");
      pin_all(out);
    }
  }

  bool flatten_like(const Node& n, const Shape& in, const Shape& out) const {
    if (in.size() < 2 || out.size() != 2 || out[0] != in[0]) return false;
    if (n.op == OpKind::flatten) return n.attr_int("axis", 1) == 1;
    // Reshape targets must keep working after channels shrink.
    const auto& target = g_.constants.at(n.inputs.at(1));
    return target.size() == 2 && target.values()[1] == -1;
  }

  ChannelGroups assemble() {
    ChannelGroups result;
    result.exclusions = exclusions_;
    result.concat_offsets = std::move(concat_offsets_);
    result.warnings = std::move(warnings_);

    std::map<int, GroupId> id_of_root;
    for (const auto& r : slots_) {
      if (r.slot.role != AxisRole::producer_out) continue;
      const int root = classes_.find(r.elem);
      if (id_of_root.contains(root)) continue;
      const GroupId id = static_cast<GroupId>(result.groups.size());
      id_of_root[root] = id;
      ChannelGroup group;
      group.id = id;
      group.pinned = classes_.pinned(root);
      result.groups.push_back(std::move(group));
    }
    for (const auto& r : slots_) {
      auto it = id_of_root.find(classes_.find(r.elem));
      if (it != id_of_root.end()) result.groups[static_cast<std::size_t>(it->second)].slots.push_back(r.slot);
    }
    for (const auto& [elem, point] : masks_) {
      auto it = id_of_root.find(classes_.find(elem));
      if (it != id_of_root.end()) result.groups[static_cast<std::size_t>(it->second)].mask_points.push_back(point);
    }
    for (auto& group : result.groups) {
      std::vector<std::string> producers;
      for (const auto& s : group.slots) {
        if (s.role == AxisRole::producer_out &&
            std::find(producers.begin(), producers.end(), s.node_id) == producers.end()) {
          producers.push_back(s.node_id);
        }
      }
      for (std::size_t i = 0; i < producers.size(); ++i) {
        group.layer += (i ? "+" : "") + producers[i];
      }
    }
    return result;
  }

  const ModelGraph& g_;
  const std::set<std::string>& exclusions_;
  ChannelClasses classes_;
  std::map<std::string, std::vector<int>> elems_;
  std::vector<Recorded> slots_;
  std::vector<std::pair<int, MaskPoint>> masks_;
  std::map<std::string, std::string> epilogue_of_;
  std::map<std::string, std::string> mask_tensor_;
  std::vector<ConcatOffset> concat_offsets_;
  std::vector<std::string> warnings_;
};

}  // namespace

std::string_view to_string(AxisRole role) {
  switch (role) {
    case AxisRole::producer_out: return "producer_out";
    case AxisRole::consumer_in: return "consumer_in";
    case AxisRole::norm_channel: return "norm_channel";
  }
  return "unknown";
}

std::vector<ChannelSlot> ChannelGroup::slots_with_role(AxisRole role) const {
  std::vector<ChannelSlot> out;
  std::copy_if(slots.begin(), slots.end(), std::back_inserter(out),
               [role](const ChannelSlot& s) { return s.role == role; });
  return out;
}

const ChannelGroup& ChannelGroups::group(GroupId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= groups.size()) {
    throw Error(ErrorKind::invalid_argument, "unknown group id " + std::to_string(id));
  }
  return groups[static_cast<std::size_t>(id)];
}

std::vector<std::string> ChannelGroups::layers() const {
  std::vector<std::string> out;
  for (const auto& group : groups) {
    if (group.pinned) continue;
    if (std::find(out.begin(), out.end(), group.layer) == out.end()) out.push_back(group.layer);
  }
  return out;
}

std::vector<GroupId> ChannelGroups::layer_groups(const std::string& layer) const {
  std::vector<GroupId> out;
  for (const auto& group : groups) {
    if (!group.pinned && group.layer == layer) out.push_back(group.id);
  }
  return out;
}

std::vector<std::string> ChannelGroups::layer_producers(const std::string& layer) const {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= layer.size()) {
    const auto end = layer.find('+', start);
    out.push_back(layer.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::size_t ChannelGroups::unpinned_count() const {
  return static_cast<std::size_t>(
      std::count_if(groups.begin(), groups.end(), [](const ChannelGroup& g) { return !g.pinned; }));
}

ChannelGroups build_channel_groups(const ModelGraph& g, const std::set<std::string>& exclusions) {
  if (g.shapes.empty()) throw Error(ErrorKind::invalid_argument, "graph has no inferred shapes");
  for (const auto& id : exclusions) {
    if (!g.node_index(id)) {
      throw Error(ErrorKind::invalid_argument, "excluded node '" + id + "' does not exist");
    }
  }
  return GroupBuilder(g, exclusions).run();
}

ChannelMask mask_for(const ChannelGroups& groups, const std::set<GroupId>& ids) {
  ChannelMask mask;
  for (GroupId id : ids) {
    for (const auto& point : groups.group(id).mask_points) mask[point.tensor].push_back(point.channel);
  }
  for (auto& [_, channels] : mask) {
    std::sort(channels.begin(), channels.end());
    channels.erase(std::unique(channels.begin(), channels.end()), channels.end());
  }
  return mask;
}

std::int64_t lead_channel(const ChannelGroups&, const ChannelGroup& group) {
  for (const auto& s : group.slots) {
    if (s.role == AxisRole::producer_out) return s.channel;
  }
  throw Error(ErrorKind::invalid_argument, "group " + std::to_string(group.id) + " has no producer");
}

}  // namespace pagcp
