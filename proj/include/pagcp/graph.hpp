#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "pagcp/tensor.hpp"

namespace pagcp {

/// Operators understood by the engine. Anything else may only appear as an
/// `opaque` node that was explicitly excluded at load time.
enum class OpKind {
  conv,
  gemm,
  matmul,
  batch_norm,
  relu,
  max_pool,
  average_pool,
  global_average_pool,
  add,
  concat,
  flatten,
  reshape,
  opaque,
};

std::string_view op_type_name(OpKind op);
std::optional<OpKind> op_kind_from_type(std::string_view op_type);

using AttrValue =
    std::variant<std::int64_t, float, std::string, std::vector<std::int64_t>, std::vector<float>>;

struct Node {
  std::string id;
  OpKind op = OpKind::opaque;
  std::string op_type;  // original ONNX op_type, kept for opaque nodes
  std::string domain;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::map<std::string, AttrValue> attrs;
  std::map<std::string, std::string> raw_attrs;  // serialized attributes of opaque nodes

  std::int64_t attr_int(const std::string& name, std::int64_t fallback) const;
  float attr_float(const std::string& name, float fallback) const;
  std::string attr_string(const std::string& name, const std::string& fallback) const;
  std::vector<std::int64_t> attr_ints(const std::string& name,
                                      std::vector<std::int64_t> fallback) const;

  friend bool operator==(const Node&, const Node&) = default;
};

/// Declared graph input or output. A negative dimension is symbolic and
/// carries its name in `dim_params`.
struct ValueSpec {
  std::string name;
  Shape shape;
  std::vector<std::string> dim_params;

  friend bool operator==(const ValueSpec&, const ValueSpec&) = default;
};

struct Edge {
  std::string tensor;
  std::string producer;  // node id, or empty for graph inputs
  std::string consumer;  // node id
};

/// Computation graph with weights. Nodes are kept in topological order;
/// tensors are connected by name as in ONNX.
struct ModelGraph {
  std::string name;
  std::vector<Node> nodes;
  std::map<std::string, TensorF> weights;        // float initializers
  std::map<std::string, TensorI64> constants;    // int64 initializers (reshape targets)
  std::vector<ValueSpec> input_specs;
  std::vector<ValueSpec> output_specs;
  std::map<std::string, Shape> declared_shapes;  // value_info, used for opaque outputs
  std::map<std::string, Shape> shapes;           // inferred, batch dimension fixed to 1
  std::int64_t opset = 13;
  std::string source_hash;

  const Node& node(const std::string& id) const;
  std::optional<std::size_t> node_index(const std::string& id) const;
  bool is_weight(const std::string& tensor) const;
  bool is_initializer(const std::string& tensor) const;
  std::vector<std::string> weight_refs(const Node& n) const;

  /// Node id producing `tensor`, or empty for graph inputs and initializers.
  std::string producer_of(const std::string& tensor) const;
  std::vector<std::string> consumers_of(const std::string& tensor) const;
  std::vector<Edge> edges() const;
  bool is_graph_output(const std::string& tensor) const;
};

/// Options controlling which unsupported ops are tolerated.
struct LoadOptions {
  std::set<std::string> exclusions;  // node ids allowed to be opaque
};

/// Orders nodes topologically (stable w.r.t. the original order) or throws
/// on cycles and dangling inputs.
void topological_sort(ModelGraph& g);

/// Static shape inference for every tensor with batch fixed to 1.
std::map<std::string, Shape> infer_shapes(const ModelGraph& g);

/// Full validation: non-empty, acyclic, supported ops, weight layouts, shapes.
/// Stores inferred shapes on success.
void validate(ModelGraph& g, const LoadOptions& options = {});

/// Same nodes in the same order, same input/output specs, bit-identical
/// weights. Metadata (source hash, declared value_info) is not compared.
bool isomorphic(const ModelGraph& a, const ModelGraph& b);

/// Output channel count of a producer node (conv, gemm, matmul).
std::int64_t producer_out_channels(const ModelGraph& g, const Node& n);

bool is_producer(OpKind op);

}  // namespace pagcp
