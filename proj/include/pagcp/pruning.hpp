#pragma once

#include <set>

#include "pagcp/channel_groups.hpp"
#include "pagcp/graph.hpp"

namespace pagcp {

/// Structurally removes every slot of the `dropped` groups: producer output
/// channels (weights and bias), matching consumer input slices, and
/// per-channel entries of epilogue nodes. Returns a re-validated copy.
ModelGraph apply_pruning(const ModelGraph& g, const ChannelGroups& groups,
                         const std::set<GroupId>& dropped, std::int64_t min_channels = 1);

/// Output channels that may still be dropped from `layer` without any of
/// its producers falling below `min_channels`.
std::int64_t max_droppable(const ModelGraph& g, const ChannelGroups& groups,
                           const std::string& layer, std::int64_t min_channels);

}  // namespace pagcp
