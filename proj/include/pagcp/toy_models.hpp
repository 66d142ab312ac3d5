#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "pagcp/graph.hpp"

namespace pagcp {

/// Small two-head conv nets used as fixtures. Both have a shared trunk with
/// one residual add and one channel concat, a classification head ("logits")
/// and a regression head ("regression").
enum class ToyArch { toy_mt_a, toy_mt_b };

std::string_view to_string(ToyArch arch);
std::optional<ToyArch> toy_arch_from_name(std::string_view name);

/// Deterministic in (seed, arch) down to the bit.
ModelGraph build_toy_model(std::uint64_t seed, ToyArch arch);

/// Producers of the output heads, the minimal exclusion list for pruning.
std::set<std::string> toy_head_nodes(ToyArch arch);

}  // namespace pagcp
