#include "pagcp/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace pagcp {

std::string_view to_string(StateKind kind) {
  switch (kind) {
    case StateKind::l1_weight: return "l1_weight";
    case StateKind::loss_state: return "loss_state";
    case StateKind::clamped_loss_state: return "clamped_loss_state";
  }
  return "unknown";
}

const SaliencyEntry& SaliencyTable::at(GroupId id) const {
  auto it = entries.find(id);
  if (it == entries.end()) throw Error(ErrorKind::invalid_argument, "no saliency for group " + std::to_string(id));
  return it->second;
}

std::vector<GroupId> SaliencyTable::ascending(std::span<const GroupId> ids) const {
  std::vector<GroupId> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end(), [this](GroupId a, GroupId b) {
    const double sa = at(a).normalized, sb = at(b).normalized;
    return sa != sb ? sa < sb : a < b;
  });
  return out;
}

std::string SaliencyTable::to_csv(const ChannelGroups& groups) const {
  std::string out = "group_id,layer,raw,normalized,probability\n";
  char buf[128];
  for (const auto& [id, e] : entries) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g\n", e.raw, e.normalized, e.probability);
    out += std::to_string(id) + "," + groups.group(id).layer + buf;
  }
  return out;
}

FilterNorm filter_l1(const ModelGraph& g, const Node& n, std::int64_t channel,
                     const std::set<std::int64_t>& skip_inputs) {
  const TensorF& w = g.weights.at(n.inputs.at(1));
  const float* p = w.raw();
  FilterNorm out;
  auto add = [&](std::int64_t offset) {
    out.l1 += std::abs(static_cast<double>(p[offset]));
    ++out.count;
  };
  switch (n.op) {
    case OpKind::conv: {
      const std::int64_t cin = w.dim(1), k = w.dim(2) * w.dim(3);
      for (std::int64_t c = 0; c < cin; ++c) {
        if (skip_inputs.contains(c)) continue;
        for (std::int64_t i = 0; i < k; ++i) add((channel * cin + c) * k + i);
      }
      break;
    }
    case OpKind::gemm:
    case OpKind::matmul: {
      const bool out_major = n.op == OpKind::gemm && n.attr_int("transB", 0) != 0;
      const std::int64_t rows = w.dim(0), cols = w.dim(1);
      const std::int64_t in = out_major ? cols : rows;
      for (std::int64_t c = 0; c < in; ++c) {
        if (skip_inputs.contains(c)) continue;
        add(out_major ? channel * cols + c : c * cols + channel);
      }
      break;
    }
    default:
      throw Error(ErrorKind::invalid_argument, "node is not a channel producer", n.id);
  }
  return out;
}

SaliencyTable filter_l1_saliency(const ModelGraph& g, const ChannelGroups& groups) {
  SaliencyTable table;
  for (const auto& group : groups.groups) {
    if (group.pinned) continue;
    SaliencyEntry e;
    std::size_t slots = 0;
    for (const auto& s : group.slots) {
      if (s.role != AxisRole::producer_out) continue;
      const FilterNorm f = filter_l1(g, g.node(s.node_id), s.channel);
      e.raw += f.l1;
      e.normalized += f.count ? f.l1 / static_cast<double>(f.count) : 0.0;
      ++slots;
    }
    e.raw /= static_cast<double>(slots);
    e.normalized /= static_cast<double>(slots);
    e.probability = std::exp(-e.normalized);
    table.entries[group.id] = e;
  }
  return table;
}

StateProbe::StateProbe(StateKind kind, const ChannelGroups& groups, int r)
    : kind_(kind), groups_(&groups), r_(r) {
  if (r < 1) throw Error(ErrorKind::invalid_argument, "norm order must be a positive integer");
}

StateProbe StateProbe::l1_weight(const ChannelGroups& groups, int r) {
  return StateProbe(StateKind::l1_weight, groups, r);
}

StateProbe StateProbe::loss(const ChannelGroups& groups, EvalDataset sample, bool clamped, int r) {
  StateProbe p(clamped ? StateKind::clamped_loss_state : StateKind::loss_state, groups, r);
  p.oracle_ = std::make_shared<BuiltinOracle>(std::move(sample));
  return p;
}

std::size_t StateProbe::state_dim() const {
  return kind_ == StateKind::l1_weight ? 1 : oracle_->data().tasks.size();
}

namespace {

// Normalized l1 of a group's filters with the given input slices removed,
// divided by the original filter sizes.
double group_value(const ModelGraph& g, const ChannelGroup& group,
                   const std::map<std::string, std::set<std::int64_t>>& removed_inputs) {
  static const std::set<std::int64_t> none;
  double value = 0.0;
  std::size_t slots = 0;
  for (const auto& s : group.slots) {
    if (s.role != AxisRole::producer_out) continue;
    const Node& n = g.node(s.node_id);
    auto it = removed_inputs.find(s.node_id);
    const FilterNorm kept = filter_l1(g, n, s.channel, it == removed_inputs.end() ? none : it->second);
    const std::int64_t size = filter_l1(g, n, s.channel).count;
    value += size ? kept.l1 / static_cast<double>(size) : 0.0;
    ++slots;
  }
  return value / static_cast<double>(slots);
}

std::map<std::string, std::set<std::int64_t>> removed_inputs(const ChannelGroups& groups,
                                                            const std::set<GroupId>& dropped) {
  std::map<std::string, std::set<std::int64_t>> out;
  for (GroupId id : dropped) {
    for (const auto& s : groups.group(id).slots) {
      if (s.role == AxisRole::consumer_in) out[s.node_id].insert(s.channel);
    }
  }
  return out;
}

}  // namespace

Eigen::MatrixXd StateProbe::reference_outputs(const ModelGraph& g) const {
  if (kind_ == StateKind::l1_weight) {
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(1, 1);
    for (const auto& group : groups_->groups) {
      if (!group.pinned) f(0, 0) += group_value(g, group, {});
    }
    return f;
  }
  return loss_state(g, {});
}

double StateProbe::l1_transition(const ModelGraph& g, const std::set<GroupId>& from,
                                 const std::set<GroupId>& to) const {
  const auto before = removed_inputs(*groups_, from);
  const auto after = removed_inputs(*groups_, to);
  double total = 0.0;
  for (const auto& group : groups_->groups) {
    if (group.pinned || from.contains(group.id)) continue;
    if (to.contains(group.id)) {
      total += group_value(g, group, before);
      continue;
    }
    // Only groups whose producers lost extra input slices change value.
    bool touched = false;
    for (const auto& s : group.slots) {
      if (s.role != AxisRole::producer_out) continue;
      auto a = before.find(s.node_id);
      auto b = after.find(s.node_id);
      const std::size_t na = a == before.end() ? 0 : a->second.size();
      const std::size_t nb = b == after.end() ? 0 : b->second.size();
      touched = touched || na != nb;
    }
    if (touched) total += group_value(g, group, before) - group_value(g, group, after);
  }
  return total;
}

const Eigen::MatrixXd& StateProbe::loss_state(const ModelGraph& g, const std::set<GroupId>& dropped) const {
  const std::string fp = graph_fingerprint(g);
  if (fp != fingerprint_) {
    memo_.clear();
    fingerprint_ = fp;
  }
  auto it = memo_.find(dropped);
  if (it == memo_.end()) {
    it = memo_.emplace(dropped, oracle_->sample_losses(g, mask_for(*groups_, dropped))).first;
  }
  return it->second;
}

double StateProbe::transition(const ModelGraph& g, const std::set<GroupId>& from,
                              const std::set<GroupId>& to) const {
  if (!std::includes(to.begin(), to.end(), from.begin(), from.end())) {
    throw Error(ErrorKind::invalid_argument, "saliency transition must extend the dropped set");
  }
  if (kind_ == StateKind::l1_weight) return l1_transition(g, from, to);

  const Eigen::MatrixXd a = loss_state(g, from);
  const Eigen::MatrixXd& b = loss_state(g, to);
  Eigen::MatrixXd diff = kind_ == StateKind::clamped_loss_state ? Eigen::MatrixXd((b - a).cwiseMax(0.0))
                                                                : Eigen::MatrixXd(a - b);
  double total = 0.0;
  for (Eigen::Index s = 0; s < diff.rows(); ++s) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t < diff.cols(); ++t) acc += std::pow(std::abs(diff(s, t)), r_);
    total += r_ == 1 ? acc : std::pow(acc, 1.0 / r_);
  }
  return total / static_cast<double>(diff.rows());
}

double marginal_saliency(const StateProbe& probe, const ModelGraph& g, GroupId id) {
  return probe.transition(g, {}, {id});
}

double conditional_saliency(const StateProbe& probe, const ModelGraph& g,
                            const std::set<GroupId>& first, GroupId next) {
  if (first.contains(next)) throw Error(ErrorKind::invalid_argument, "group already in the first set");
  std::set<GroupId> to = first;
  to.insert(next);
  return probe.transition(g, first, to);
}

SubadditivityCheck check_subadditivity(const StateProbe& probe, const ModelGraph& g,
                                       std::span<const GroupId> chain) {
  if (chain.size() < 2) throw Error(ErrorKind::invalid_argument, "chain needs at least two groups");
  std::set<GroupId> all(chain.begin(), chain.end());
  if (all.size() != chain.size()) throw Error(ErrorKind::invalid_argument, "chain has repeated groups");

  SubadditivityCheck out;
  std::set<GroupId> prefix;
  for (GroupId id : chain) {
    out.terms.push_back(conditional_saliency(probe, g, prefix, id));
    out.bound += out.terms.back();
    prefix.insert(id);
  }
  out.joint = probe.transition(g, {}, all);
  out.holds = out.joint <= out.bound + 1e-9 * std::max(1.0, out.bound);
  return out;
}

ProbabilityCheck check_probability_bound(const StateProbe& probe, const ModelGraph& g,
                                         std::span<const GroupId> chain) {
  const SubadditivityCheck s = check_subadditivity(probe, g, chain);
  ProbabilityCheck out;
  out.p_joint = std::exp(-s.joint);
  out.p_product = 1.0;
  for (double t : s.terms) out.p_product *= std::exp(-t);
  out.holds = out.p_joint >= out.p_product - 1e-12;
  return out;
}

}  // namespace pagcp
