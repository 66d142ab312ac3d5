#include "oracles.hpp"

#include <algorithm>

namespace pagcp::testing {

std::int64_t loop_count_flops(const ModelGraph& g, const Node& n, std::int64_t fpm) {
  const Shape& out = g.shapes.at(n.outputs.at(0));
  std::int64_t count = 0;
  switch (n.op) {
    case OpKind::conv: {
      const Shape& w = g.weights.at(n.inputs[1]).shape();
      const std::int64_t group = n.attr_int("group", 1);
      const std::int64_t cin = g.shapes.at(n.inputs[0])[1];
      for (std::int64_t co = 0; co < w[0]; ++co)
        for (std::int64_t oh = 0; oh < out[2]; ++oh)
          for (std::int64_t ow = 0; ow < out[3]; ++ow)
            for (std::int64_t ci = 0; ci < cin / group; ++ci)
              for (std::int64_t i = 0; i < w[2]; ++i)
                for (std::int64_t j = 0; j < w[3]; ++j) count += fpm;
      return count;
    }
    case OpKind::gemm:
    case OpKind::matmul: {
      const std::int64_t in = g.shapes.at(n.inputs[0])[1];
      for (std::int64_t o = 0; o < out[1]; ++o)
        for (std::int64_t k = 0; k < in; ++k) count += fpm;
      return count;
    }
    case OpKind::batch_norm:
    case OpKind::relu:
    case OpKind::max_pool:
    case OpKind::average_pool:
    case OpKind::global_average_pool:
    case OpKind::add: {
      std::int64_t elems = 1;
      for (auto d : out) elems *= d;
      for (std::int64_t e = 0; e < elems; ++e) ++count;
      return count;
    }
    default:
      return 0;
  }
}

std::int64_t tensor_walk_params(const ModelGraph& g) {
  std::int64_t total = 0;
  for (const auto& [_, t] : g.weights) {
    for ([[maybe_unused]] float v : t.values()) ++total;
  }
  return total;
}

std::set<GroupId> random_legal_drop(const ModelGraph& g, const ChannelGroups& groups, Rng& rng,
                                    double max_fraction) {
  std::set<GroupId> dropped;
  for (const auto& layer : groups.layers()) {
    auto ids = groups.layer_groups(layer);
    std::int64_t room = static_cast<std::int64_t>(ids.size());
    for (const auto& p : groups.layer_producers(layer)) {
      room = std::min(room, producer_out_channels(g, g.node(p)) - 1);
    }
    const auto limit = std::min<std::int64_t>(room, static_cast<std::int64_t>(max_fraction * static_cast<double>(ids.size())));
    if (limit <= 0) continue;
    const auto take = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(limit + 1)));
    rng.shuffle(ids);
    dropped.insert(ids.begin(), ids.begin() + take);
  }
  return dropped;
}

}  // namespace pagcp::testing
