#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pagcp/channel_groups.hpp"
#include "pagcp/saliency.hpp"

namespace pagcp {

/// prod_{i=1..L} (1 + d1 * lambda^(i-1)), with d_i built by repeated
/// multiplication exactly as the schedule stores them.
double threshold_product(double d1, double lambda, std::int64_t L);

/// Solves threshold_product(d1, lambda, L) == alpha for lambda > 0 by
/// bisection. L == 1 requires alpha == 1 + d1 and returns 1.
double solve_lambda(double alpha, double d1, std::int64_t L);

struct ThresholdSchedule {
  double d1 = 0.0;
  double lambda = 1.0;
  double alpha = 0.0;
  std::vector<double> thresholds;  // d_i = d1 * lambda^(i-1)

  static ThresholdSchedule make(double alpha, double d1, std::int64_t L);
  static std::vector<double> geometric(double d1, double lambda, std::int64_t L);
};

struct LayerOrder {
  std::vector<std::string> sequence;
  double probe_ratio = 0.0;
  std::map<std::string, std::int64_t> contributions;  // FLOPs reduction per layer
};

/// Total FLOPs removed by dropping the `count` lowest-saliency groups of
/// `layer` (downstream input slices included).
std::int64_t layer_contribution(const ModelGraph& g, const ChannelGroups& groups,
                                const SaliencyTable& saliency, const std::string& layer,
                                std::int64_t count, std::int64_t flops_per_mac = 2);

/// Orders `layers` by contribution at `probe_ratio`: descending when
/// lambda < 1, ascending otherwise, ties by layer id. Each layer probes
/// ceil(probe_ratio * K) groups, capped so that `min_channels` remain.
LayerOrder rank_layers(const ModelGraph& g, const ChannelGroups& groups,
                       const SaliencyTable& saliency, const std::vector<std::string>& layers,
                       double probe_ratio, double lambda, std::int64_t min_channels = 1,
                       std::int64_t flops_per_mac = 2);

std::vector<std::string> order_by_contribution(std::vector<std::string> layers,
                                               const std::map<std::string, std::int64_t>& contributions,
                                               bool descending);

}  // namespace pagcp
