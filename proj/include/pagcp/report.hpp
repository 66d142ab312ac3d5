#pragma once

#include <string>
#include <vector>

#include "pagcp/pruner.hpp"

namespace pagcp {

/// node,initial,iter_1,...,iter_n: output channels of every producer.
std::string width_table(const PruningPlan& plan);

/// One row per layer decision:
/// iteration,position,layer,sensitive_task,ratio,dropped,total_groups,threshold,achieved_drop,selected
std::string sensitivity_table(const PruningPlan& plan);

/// metric,value rows: status, iterations, FLOPs and params before/after and
/// their reductions in percent, initial and final loss per task.
std::string summary_table(const PruningPlan& plan);

double flops_reduction_pct(const PruningPlan& plan);
double params_reduction_pct(const PruningPlan& plan);

/// probe_ratio followed by the layer order at that ratio, one row per ratio.
std::string sequence_matrix(const ModelGraph& g, const ChannelGroups& groups, const std::vector<double>& ratios,
                            const PagcpConfig& config);

}  // namespace pagcp
