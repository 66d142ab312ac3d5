#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pagcp {

enum class ErrorKind {
  malformed_model,
  unsupported_op,
  empty_graph,
  shape_inference,
  invalid_argument,
  pinned_group,
  below_min_channels,
  infeasible,
  non_convergence,
  evaluation,
  protocol,
  timeout,
  evaluator_failure,
  io,
  config,
};

std::string_view to_string(ErrorKind kind);

/// Exception carrying an error category and, where relevant, the graph node
/// that triggered it.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string node_id = {});

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& node_id() const noexcept { return node_id_; }

 private:
  ErrorKind kind_;
  std::string node_id_;
};

}  // namespace pagcp
