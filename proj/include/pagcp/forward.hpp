#pragma once

#include <map>
#include <span>
#include <string>

#include "pagcp/channel_groups.hpp"
#include "pagcp/graph.hpp"

namespace pagcp {

using TensorMap = std::map<std::string, TensorF>;

/// Evaluates one node on batched inputs (inputs[i] matches n.inputs[i];
/// initializers are looked up in `g`).
TensorF run_node(const ModelGraph& g, const Node& n, std::span<const TensorF* const> inputs);

/// Zeroes `channels` along axis 1 of `t` for every sample.
void zero_channels(TensorF& t, std::span<const std::int64_t> channels);

/// Reference float32 executor. `mask` zeroes the listed channels of a tensor
/// right after it is produced. Throws on a non-finite value, naming the node.
TensorMap forward(const ModelGraph& g, const TensorMap& inputs, const ChannelMask& mask = {});

/// Holds every activation of the unmasked pass so a masked pass only
/// recomputes nodes downstream of a masked tensor. Results are bit-identical
/// to `forward`. The graph must outlive the cache.
class ForwardCache {
 public:
  ForwardCache(const ModelGraph& g, TensorMap inputs);

  TensorMap run(const ChannelMask& mask) const;
  const ModelGraph& graph() const noexcept { return *g_; }
  std::int64_t batch() const noexcept { return batch_; }

 private:
  const ModelGraph* g_;
  TensorMap values_;
  std::int64_t batch_ = 0;
};

}  // namespace pagcp
