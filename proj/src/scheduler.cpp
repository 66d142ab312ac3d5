#include "pagcp/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pagcp/cost.hpp"
#include "pagcp/pruning.hpp"

namespace pagcp {

double threshold_product(double d1, double lambda, std::int64_t L) {
  double product = 1.0;
  double d = d1;
  for (std::int64_t i = 0; i < L; ++i) {
    product *= 1.0 + d;
    d *= lambda;
  }
  return product;
}

double solve_lambda(double alpha, double d1, std::int64_t L) {
  if (L < 1) throw Error(ErrorKind::invalid_argument, "layer count must be positive");
  if (!(d1 > 0.0 && d1 < 1.0)) throw Error(ErrorKind::invalid_argument, "d1 must lie in (0, 1)");
  const double tol = 1e-9 * alpha;
  if (L == 1) {
    if (std::abs(1.0 + d1 - alpha) > tol) {
      throw Error(ErrorKind::infeasible, "a single layer requires alpha = 1 + d1");
    }
    return 1.0;
  }
  if (alpha <= 1.0 + d1) {
    throw Error(ErrorKind::infeasible, "alpha must exceed 1 + d1 when more than one layer is pruned");
  }
  auto residual = [&](double lambda) { return threshold_product(d1, lambda, L) - alpha; };
  if (std::abs(residual(1.0)) <= tol) return 1.0;

  double lo = 0.0, hi = 1.0;
  while (residual(hi) < 0.0) {
    lo = hi;
    hi *= 2.0;
    if (!std::isfinite(hi)) throw Error(ErrorKind::non_convergence, "no upper bracket for lambda");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double r = residual(mid);
    if (std::abs(r) <= tol) return mid;
    (r < 0.0 ? lo : hi) = mid;
  }
  throw Error(ErrorKind::non_convergence, "lambda bisection did not converge in 200 iterations");
}

std::vector<double> ThresholdSchedule::geometric(double d1, double lambda, std::int64_t L) {
  std::vector<double> out;
  double d = d1;
  for (std::int64_t i = 0; i < L; ++i) {
    out.push_back(d);
    d *= lambda;
  }
  return out;
}

ThresholdSchedule ThresholdSchedule::make(double alpha, double d1, std::int64_t L) {
  ThresholdSchedule s;
  s.alpha = alpha;
  s.d1 = d1;
  s.lambda = solve_lambda(alpha, d1, L);
  s.thresholds = geometric(d1, s.lambda, L);
  return s;
}

std::int64_t layer_contribution(const ModelGraph& g, const ChannelGroups& groups,
                                const SaliencyTable& saliency, const std::string& layer,
                                std::int64_t count, std::int64_t flops_per_mac) {
  if (count <= 0) return 0;
  const auto order = saliency.ascending(groups.layer_groups(layer));
  const auto n = std::min<std::int64_t>(count, static_cast<std::int64_t>(order.size()));
  const std::set<GroupId> dropped(order.begin(), order.begin() + n);
  const ModelGraph pruned = apply_pruning(g, groups, dropped, 0);
  return count_cost(g, flops_per_mac).total_flops - count_cost(pruned, flops_per_mac).total_flops;
}

std::vector<std::string> order_by_contribution(std::vector<std::string> layers,
                                               const std::map<std::string, std::int64_t>& contributions,
                                               bool descending) {
  std::sort(layers.begin(), layers.end(), [&](const std::string& a, const std::string& b) {
    const auto ca = contributions.at(a), cb = contributions.at(b);
    if (ca != cb) return descending ? ca > cb : ca < cb;
    return a < b;
  });
  return layers;
}

LayerOrder rank_layers(const ModelGraph& g, const ChannelGroups& groups,
                       const SaliencyTable& saliency, const std::vector<std::string>& layers,
                       double probe_ratio, double lambda, std::int64_t min_channels,
                       std::int64_t flops_per_mac) {
  if (!(probe_ratio > 0.0 && probe_ratio < 1.0)) {
    throw Error(ErrorKind::invalid_argument, "probe ratio must lie in (0, 1)");
  }
  LayerOrder order;
  order.probe_ratio = probe_ratio;
  for (const auto& layer : layers) {
    const auto k = static_cast<double>(groups.layer_groups(layer).size());
    const auto count = std::min(static_cast<std::int64_t>(std::ceil(probe_ratio * k)),
                                max_droppable(g, groups, layer, min_channels));
    order.contributions[layer] = layer_contribution(g, groups, saliency, layer, count, flops_per_mac);
  }
  order.sequence = order_by_contribution(layers, order.contributions, lambda < 1.0);
  return order;
}

}  // namespace pagcp
