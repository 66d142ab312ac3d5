#pragma once

#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pagcp/channel_groups.hpp"
#include "pagcp/oracle.hpp"

namespace pagcp {

enum class StateKind { l1_weight, loss_state, clamped_loss_state };

std::string_view to_string(StateKind kind);

struct SaliencyEntry {
  double raw = 0.0;         // mean over producer slots of the filter l1 norm
  double normalized = 0.0;  // mean over slots of l1 / filter element count
  double probability = 1.0; // exp(-normalized)
};

struct SaliencyTable {
  std::map<GroupId, SaliencyEntry> entries;  // exactly the non-pinned groups
  StateKind state_kind = StateKind::l1_weight;
  int norm_order = 1;

  const SaliencyEntry& at(GroupId id) const;

  /// `ids` sorted by ascending normalized saliency, ties by ascending id.
  std::vector<GroupId> ascending(std::span<const GroupId> ids) const;

  /// group_id,layer,raw,normalized,probability
  std::string to_csv(const ChannelGroups& groups) const;
};

/// l1 norm and element count of the weights producing output `channel` of
/// producer `n`, skipping input channels listed in `skip_inputs`.
struct FilterNorm {
  double l1 = 0.0;
  std::int64_t count = 0;
};
FilterNorm filter_l1(const ModelGraph& g, const Node& n, std::int64_t channel,
                     const std::set<std::int64_t>& skip_inputs = {});

SaliencyTable filter_l1_saliency(const ModelGraph& g, const ChannelGroups& groups);

/// State function f used by the joint-saliency checkers.
///
/// l1_weight: f(D) sums, over kept non-pinned groups, the normalized l1 of
/// the group's filters with input slices removed by D excluded (divided by
/// the original filter size). The saliency of going from D to D' is
/// f(D) - f(D'), additive by construction.
///
/// loss_state: f(x; D) is the per-sample task-loss vector with D masked;
/// the saliency is the probe-batch mean of ||f(x; D) - f(x; D')||_r.
/// clamped_loss_state uses ||max(f(x; D') - f(x; D), 0)||_r, so dropping a
/// group that lowers every loss costs nothing.
class StateProbe {
 public:
  static StateProbe l1_weight(const ChannelGroups& groups, int r = 1);
  static StateProbe loss(const ChannelGroups& groups, EvalDataset sample, bool clamped = false, int r = 1);

  StateKind kind() const noexcept { return kind_; }
  int norm_order() const noexcept { return r_; }

  /// Dimension n of the state (1 for l1_weight, task count otherwise).
  std::size_t state_dim() const;

  /// f(x; theta) for the unmasked graph, rows = probe samples.
  Eigen::MatrixXd reference_outputs(const ModelGraph& g) const;

  /// Saliency of extending the dropped set from `from` to `to` (from ⊆ to).
  double transition(const ModelGraph& g, const std::set<GroupId>& from,
                    const std::set<GroupId>& to) const;

 private:
  StateProbe(StateKind kind, const ChannelGroups& groups, int r);

  double l1_transition(const ModelGraph& g, const std::set<GroupId>& from,
                       const std::set<GroupId>& to) const;
  const Eigen::MatrixXd& loss_state(const ModelGraph& g, const std::set<GroupId>& dropped) const;

  StateKind kind_;
  const ChannelGroups* groups_;
  int r_;
  std::shared_ptr<BuiltinOracle> oracle_;
  mutable std::string fingerprint_;
  mutable std::map<std::set<GroupId>, Eigen::MatrixXd> memo_;
};

double marginal_saliency(const StateProbe& probe, const ModelGraph& g, GroupId id);

/// Saliency of `next` once `first` is already dropped.
double conditional_saliency(const StateProbe& probe, const ModelGraph& g,
                            const std::set<GroupId>& first, GroupId next);

struct SubadditivityCheck {
  double joint = 0.0;
  double bound = 0.0;
  std::vector<double> terms;  // marginal of chain[0], then conditionals
  bool holds = false;
};

/// Joint saliency of dropping the whole chain against the marginal of the
/// first element plus the chained conditional saliencies.
SubadditivityCheck check_subadditivity(const StateProbe& probe, const ModelGraph& g,
                                       std::span<const GroupId> chain);

struct ProbabilityCheck {
  double p_joint = 0.0;
  double p_product = 0.0;
  bool holds = false;
};

ProbabilityCheck check_probability_bound(const StateProbe& probe, const ModelGraph& g,
                                         std::span<const GroupId> chain);

}  // namespace pagcp
