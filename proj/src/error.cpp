#include "pagcp/error.hpp"

namespace pagcp {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::malformed_model: return "MalformedModel";
    case ErrorKind::unsupported_op: return "UnsupportedOp";
    case ErrorKind::empty_graph: return "EmptyGraph";
    case ErrorKind::shape_inference: return "ShapeInference";
    case ErrorKind::invalid_argument: return "InvalidArgument";
    case ErrorKind::pinned_group: return "PinnedGroup";
    case ErrorKind::below_min_channels: return "BelowMinChannels";
    case ErrorKind::infeasible: return "Infeasible";
    case ErrorKind::non_convergence: return "NonConvergence";
    case ErrorKind::evaluation: return "Evaluation";
    case ErrorKind::protocol: return "ProtocolViolation";
    case ErrorKind::timeout: return "Timeout";
    case ErrorKind::evaluator_failure: return "EvaluatorFailure";
    case ErrorKind::io: return "IO";
    case ErrorKind::config: return "Config";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorKind kind, const std::string& message,
                           const std::string& node_id) {
  std::string out(to_string(kind));
  if (!node_id.empty()) out += " [node " + node_id + "]";
  out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorKind kind, const std::string& message, std::string node_id)
    : std::runtime_error(format_message(kind, message, node_id)),
      kind_(kind),
      node_id_(std::move(node_id)) {}

}  // namespace pagcp
