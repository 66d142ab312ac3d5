#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pagcp/graph.hpp"

namespace pagcp {

using GroupId = int;

enum class AxisRole { producer_out, consumer_in, norm_channel };

std::string_view to_string(AxisRole role);

/// One coupled index: output channel of a producer, input column of a
/// consumer, or per-channel entry of a normalization/bias node.
struct ChannelSlot {
  std::string node_id;
  AxisRole role;
  std::int64_t channel;

  auto operator<=>(const ChannelSlot&) const = default;
};

/// Where a dropped channel is zeroed when the group is masked instead of
/// removed: the producer output after its normalization epilogue.
struct MaskPoint {
  std::string tensor;
  std::int64_t channel;

  auto operator<=>(const MaskPoint&) const = default;
};

/// Channels that must be removed together for the graph to stay consistent.
struct ChannelGroup {
  GroupId id = 0;
  std::vector<ChannelSlot> slots;
  bool pinned = false;
  /// Producers of this group joined by '+', e.g. "conv1+conv3" for channels
  /// tied through a residual add. Groups sharing a layer are pruned together
  /// as one pruning layer.
  std::string layer;
  std::vector<MaskPoint> mask_points;

  std::vector<ChannelSlot> slots_with_role(AxisRole role) const;
};

struct ConcatOffset {
  std::string node_id;
  std::string input;
  std::int64_t offset;
};

struct ChannelGroups {
  std::vector<ChannelGroup> groups;  // groups[i].id == i
  std::vector<ConcatOffset> concat_offsets;
  std::vector<std::string> warnings;
  std::set<std::string> exclusions;

  const ChannelGroup& group(GroupId id) const;

  /// Layers with at least one non-pinned group, in topological order of
  /// their first producer.
  std::vector<std::string> layers() const;

  /// Non-pinned group ids of `layer`, ascending.
  std::vector<GroupId> layer_groups(const std::string& layer) const;

  /// Producer node ids of `layer`.
  std::vector<std::string> layer_producers(const std::string& layer) const;

  std::size_t unpinned_count() const;
};

/// Partitions every producer output channel into coupled groups. Channels of
/// excluded nodes, channels reaching graph outputs or opaque nodes, and
/// channels passing through topologies that cannot be sliced consistently
/// are pinned (the latter with a warning).
ChannelGroups build_channel_groups(const ModelGraph& g, const std::set<std::string>& exclusions);

/// Mask overlay for the forward pass: tensor name -> channels to zero.
using ChannelMask = std::map<std::string, std::vector<std::int64_t>>;

ChannelMask mask_for(const ChannelGroups& groups, const std::set<GroupId>& ids);

/// Output-channel index of `group` on the first producer of its layer.
std::int64_t lead_channel(const ChannelGroups& groups, const ChannelGroup& group);

}  // namespace pagcp
