#include "pagcp/report.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "pagcp/pruning.hpp"

namespace pagcp {

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

double pct(std::int64_t before, std::int64_t after) {
  return before > 0 ? 100.0 * static_cast<double>(before - after) / static_cast<double>(before) : 0.0;
}

}  // namespace

std::string width_table(const PruningPlan& plan) {
  std::ostringstream out;
  out << "node,initial";
  for (std::size_t i = 0; i < plan.iterations.size(); ++i) out << ",iter_" << (i + 1);
  out << "\n";
  for (const auto& [node, w] : plan.initial_widths) {
    out << node << "," << w;
    for (const auto& it : plan.iterations) {
      const auto found = it.widths.find(node);
      out << "," << (found == it.widths.end() ? 0 : found->second);
    }
    out << "\n";
  }
  return out.str();
}

std::string sensitivity_table(const PruningPlan& plan) {
  std::ostringstream out;
  out << "iteration,position,layer,sensitive_task,ratio,dropped,total_groups,threshold,achieved_drop,selected\n";
  for (const auto& it : plan.iterations) {
    for (std::size_t i = 0; i < it.layer_decisions.size(); ++i) {
      const auto& d = it.layer_decisions[i];
      const bool selected =
          std::find(it.selected_top_p.begin(), it.selected_top_p.end(), d.layer) != it.selected_top_p.end();
      out << it.index << "," << i << "," << d.layer << "," << d.sensitive_task_name << "," << num(d.ratio) << ","
          << d.dropped.size() << "," << d.total_groups << "," << num(d.threshold) << "," << num(d.achieved_drop)
          << "," << (selected ? 1 : 0) << "\n";
    }
  }
  return out.str();
}

double flops_reduction_pct(const PruningPlan& plan) {
  return pct(plan.initial_cost.total_flops, plan.final_cost.total_flops);
}

double params_reduction_pct(const PruningPlan& plan) {
  return pct(plan.initial_cost.total_params, plan.final_cost.total_params);
}

std::string summary_table(const PruningPlan& plan) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "status," << to_string(plan.status) << "\n";
  out << "iterations," << plan.iterations.size() << "\n";
  out << "flops_initial," << plan.initial_cost.total_flops << "\n";
  out << "flops_final," << plan.final_cost.total_flops << "\n";
  out << "flops_reduction_pct," << fmt::format("{:.2f}", flops_reduction_pct(plan)) << "\n";
  out << "params_initial," << plan.initial_cost.total_params << "\n";
  out << "params_final," << plan.final_cost.total_params << "\n";
  out << "params_reduction_pct," << fmt::format("{:.2f}", params_reduction_pct(plan)) << "\n";
  out << "reserved_ratio," << num(plan.reserved_ratio) << "\n";
  for (std::size_t t = 0; t < plan.tasks.size(); ++t) {
    out << "loss_initial_" << plan.tasks[t] << "," << num(plan.initial_losses.values.at(t)) << "\n";
    if (t < plan.final_losses.values.size()) {
      out << "loss_final_" << plan.tasks[t] << "," << num(plan.final_losses.values[t]) << "\n";
    }
  }
  return out.str();
}

std::string sequence_matrix(const ModelGraph& g, const ChannelGroups& groups, const std::vector<double>& ratios,
                            const PagcpConfig& config) {
  const auto saliency = filter_l1_saliency(g, groups);
  std::vector<std::string> layers;
  for (const auto& layer : groups.layers()) {
    if (max_droppable(g, groups, layer, config.min_channels) > 0) layers.push_back(layer);
  }
  const double lambda = layers.size() >= 2
                            ? solve_lambda(config.alpha, config.d1, static_cast<std::int64_t>(layers.size()))
                            : 1.0;
  std::ostringstream out;
  out << "probe_ratio";
  for (std::size_t i = 0; i < layers.size(); ++i) out << ",pos_" << (i + 1);
  out << "\n";
  for (double r : ratios) {
    const auto order = rank_layers(g, groups, saliency, layers, r, lambda, config.min_channels, config.flops_per_mac);
    out << num(r);
    for (const auto& l : order.sequence) out << "," << l;
    out << "\n";
  }
  return out.str();
}

}  // namespace pagcp
