#include "pagcp/graph.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace pagcp {

namespace {

struct OpName {
  OpKind op;
  std::string_view name;
};

constexpr OpName kOpNames[] = {
    {OpKind::conv, "Conv"},
    {OpKind::gemm, "Gemm"},
    {OpKind::matmul, "MatMul"},
    {OpKind::batch_norm, "BatchNormalization"},
    {OpKind::relu, "Relu"},
    {OpKind::max_pool, "MaxPool"},
    {OpKind::average_pool, "AveragePool"},
    {OpKind::global_average_pool, "GlobalAveragePool"},
    {OpKind::add, "Add"},
    {OpKind::concat, "Concat"},
    {OpKind::flatten, "Flatten"},
    {OpKind::reshape, "Reshape"},
};

[[noreturn]] void shape_error(const Node& n, const std::string& what) {
  throw Error(ErrorKind::shape_inference, what, n.id);
}

const Shape& shape_of(const std::map<std::string, Shape>& shapes, const Node& n,
                      const std::string& tensor) {
  auto it = shapes.find(tensor);
  if (it == shapes.end()) shape_error(n, "unknown input tensor '" + tensor + "'");
  return it->second;
}

std::int64_t normalize_axis(const Node& n, std::int64_t axis, std::int64_t rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) shape_error(n, "axis out of range");
  return axis;
}

Shape broadcast(const Node& n, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      shape_error(n, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::int64_t pooled_extent(const Node& n, std::int64_t in, std::int64_t k, std::int64_t stride,
                           std::int64_t pad_begin, std::int64_t pad_end, std::int64_t dilation) {
  const std::int64_t span = dilation * (k - 1) + 1;
  const std::int64_t padded = in + pad_begin + pad_end;
  if (stride <= 0 || k <= 0 || padded < span) shape_error(n, "window larger than padded input");
  return (padded - span) / stride + 1;
}

void check_spatial_attrs(const Node& n, const std::vector<std::int64_t>& kernel,
                         const std::vector<std::int64_t>& strides,
                         const std::vector<std::int64_t>& pads) {
  if (kernel.size() != 2 || strides.size() != 2 || pads.size() != 4) {
    shape_error(n, "only 2-D kernels with 4 pad values are supported");
  }
  const std::string auto_pad = n.attr_string("auto_pad", "NOTSET");
  if (auto_pad != "NOTSET") shape_error(n, "auto_pad=" + auto_pad + " is not supported");
}

Shape infer_node(const ModelGraph& g, const Node& n, const std::map<std::string, Shape>& shapes) {
  auto input = [&](std::size_t i) -> const Shape& {
    if (i >= n.inputs.size() || n.inputs[i].empty()) shape_error(n, "missing input " + std::to_string(i));
    return shape_of(shapes, n, n.inputs[i]);
  };
  switch (n.op) {
    case OpKind::conv: {
      const Shape& x = input(0);
      const Shape& w = input(1);
      if (x.size() != 4) shape_error(n, "Conv expects NCHW input, got " + shape_string(x));
      if (w.size() != 4) shape_error(n, "Conv weight must be rank 4, got " + shape_string(w));
      const std::int64_t group = n.attr_int("group", 1);
      if (group < 1 || x[1] != w[1] * group || w[0] % group != 0) {
        shape_error(n, "Conv channel mismatch: input " + shape_string(x) + ", weight " +
                           shape_string(w) + ", group " + std::to_string(group));
      }
      if (n.inputs.size() > 2 && !n.inputs[2].empty()) {
        const Shape& b = input(2);
        if (b != Shape{w[0]}) shape_error(n, "Conv bias must have shape [" + std::to_string(w[0]) + "]");
      }
      const auto kernel = n.attr_ints("kernel_shape", {w[2], w[3]});
      const auto strides = n.attr_ints("strides", {1, 1});
      const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
      const auto dilations = n.attr_ints("dilations", {1, 1});
      check_spatial_attrs(n, kernel, strides, pads);
      if (kernel[0] != w[2] || kernel[1] != w[3]) shape_error(n, "kernel_shape disagrees with weight");
      if (dilations.size() != 2) shape_error(n, "dilations must have 2 values");
      return {x[0], w[0],
              pooled_extent(n, x[2], w[2], strides[0], pads[0], pads[2], dilations[0]),
              pooled_extent(n, x[3], w[3], strides[1], pads[1], pads[3], dilations[1])};
    }
    case OpKind::gemm: {
      const Shape& a = input(0);
      const Shape& b = input(1);
      if (a.size() != 2 || b.size() != 2) shape_error(n, "Gemm expects rank-2 operands");
      const bool ta = n.attr_int("transA", 0) != 0;
      const bool tb = n.attr_int("transB", 0) != 0;
      const std::int64_t rows = ta ? a[1] : a[0];
      const std::int64_t k = ta ? a[0] : a[1];
      const std::int64_t kb = tb ? b[1] : b[0];
      const std::int64_t cols = tb ? b[0] : b[1];
      if (k != kb) shape_error(n, "Gemm inner dimension mismatch");
      if (ta) shape_error(n, "Gemm with transA=1 is not supported");
      Shape out{rows, cols};
      if (n.inputs.size() > 2 && !n.inputs[2].empty()) {
        const Shape& c = input(2);
        if (c != Shape{cols} && c != Shape{1, cols}) {
          shape_error(n, "Gemm bias must have shape [" + std::to_string(cols) + "]");
        }
      }
      return out;
    }
    case OpKind::matmul: {
      const Shape& a = input(0);
      const Shape& b = input(1);
      if (a.size() != 2 || b.size() != 2 || a[1] != b[0]) {
        shape_error(n, "MatMul supports rank-2 operands only, got " + shape_string(a) + " x " +
                           shape_string(b));
      }
      return {a[0], b[1]};
    }
    case OpKind::batch_norm: {
      const Shape& x = input(0);
      if (x.size() < 2) shape_error(n, "BatchNormalization expects rank >= 2");
      for (std::size_t i = 1; i <= 4; ++i) {
        if (input(i) != Shape{x[1]}) {
          shape_error(n, "BatchNormalization parameter " + std::to_string(i) +
                             " must have shape [" + std::to_string(x[1]) + "]");
        }
      }
      return x;
    }
    case OpKind::relu:
      return input(0);
    case OpKind::max_pool:
    case OpKind::average_pool: {
      const Shape& x = input(0);
      if (x.size() != 4) shape_error(n, "pooling expects NCHW input");
      const auto kernel = n.attr_ints("kernel_shape", {});
      const auto strides = n.attr_ints("strides", {1, 1});
      const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
      check_spatial_attrs(n, kernel, strides, pads);
      if (n.attr_int("ceil_mode", 0) != 0) shape_error(n, "ceil_mode=1 is not supported");
      const auto dilations = n.attr_ints("dilations", {1, 1});
      if (dilations != std::vector<std::int64_t>{1, 1}) shape_error(n, "pool dilations unsupported");
      return {x[0], x[1], pooled_extent(n, x[2], kernel[0], strides[0], pads[0], pads[2], 1),
              pooled_extent(n, x[3], kernel[1], strides[1], pads[1], pads[3], 1)};
    }
    case OpKind::global_average_pool: {
      const Shape& x = input(0);
      if (x.size() != 4) shape_error(n, "GlobalAveragePool expects NCHW input");
      return {x[0], x[1], 1, 1};
    }
    case OpKind::add: {
      if (n.inputs.size() != 2) shape_error(n, "Add expects two inputs");
      const Shape& a = input(0);
      const Shape& b = input(1);
      const bool ca = g.is_initializer(n.inputs[0]);
      const bool cb = g.is_initializer(n.inputs[1]);
      if (ca && cb) shape_error(n, "Add of two constants is not supported");
      Shape out = broadcast(n, a, b);
      if (!ca && !cb && a != b) shape_error(n, "Add of activations requires equal shapes");
      if ((ca && out != b) || (cb && out != a)) shape_error(n, "constant operand must not expand the activation");
      return out;
    }
    case OpKind::concat: {
      if (n.inputs.empty()) shape_error(n, "Concat without inputs");
      const Shape& first = input(0);
      const std::int64_t axis =
          normalize_axis(n, n.attr_int("axis", 1), static_cast<std::int64_t>(first.size()));
      Shape out = first;
      out[static_cast<std::size_t>(axis)] = 0;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Shape& s = input(i);
        if (s.size() != first.size()) shape_error(n, "Concat rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d) {
          if (d != static_cast<std::size_t>(axis) && s[d] != first[d]) shape_error(n, "Concat shape mismatch");
        }
        out[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
      }
      return out;
    }
    case OpKind::flatten: {
      const Shape& x = input(0);
      const std::int64_t axis = n.attr_int("axis", 1);
      if (axis < 0 || axis > static_cast<std::int64_t>(x.size())) shape_error(n, "Flatten axis out of range");
      std::int64_t outer = 1, inner = 1;
      for (std::size_t d = 0; d < x.size(); ++d) {
        (static_cast<std::int64_t>(d) < axis ? outer : inner) *= x[d];
      }
      return {outer, inner};
    }
    case OpKind::reshape: {
      const Shape& x = input(0);
      if (n.inputs.size() < 2) shape_error(n, "Reshape requires a shape input");
      auto it = g.constants.find(n.inputs[1]);
      if (it == g.constants.end()) shape_error(n, "Reshape target must be an int64 initializer");
      Shape target(it->second.values().begin(), it->second.values().end());
      std::int64_t known = 1;
      int infer_at = -1;
      for (std::size_t d = 0; d < target.size(); ++d) {
        if (target[d] == 0) {
          if (d >= x.size()) shape_error(n, "Reshape 0 refers past input rank");
          target[d] = x[d];
        }
        if (target[d] == -1) {
          if (infer_at >= 0) shape_error(n, "Reshape has more than one -1");
          infer_at = static_cast<int>(d);
        } else {
          known *= target[d];
        }
      }
      const std::int64_t total = numel(x);
      if (infer_at >= 0) {
        if (known == 0 || total % known != 0) shape_error(n, "Reshape cannot infer -1");
        target[static_cast<std::size_t>(infer_at)] = total / known;
      }
      if (numel(target) != total) shape_error(n, "Reshape element count mismatch");
      return target;
    }
    case OpKind::opaque: {
      auto it = g.declared_shapes.find(n.outputs.at(0));
      if (it == g.declared_shapes.end()) {
        shape_error(n, "opaque node output '" + n.outputs.at(0) + "' has no declared shape");
      }
      return it->second;
    }
  }
  shape_error(n, "unhandled op");
}

Shape concrete(const ValueSpec& spec) {
  Shape s = spec.shape;
  for (auto& d : s) {
    if (d < 0) d = 1;
  }
  return s;
}

}  // namespace

std::string_view op_type_name(OpKind op) {
  for (const auto& entry : kOpNames) {
    if (entry.op == op) return entry.name;
  }
  return "Opaque";
}

std::optional<OpKind> op_kind_from_type(std::string_view op_type) {
  for (const auto& entry : kOpNames) {
    if (entry.name == op_type) return entry.op;
  }
  return std::nullopt;
}

bool is_producer(OpKind op) {
  return op == OpKind::conv || op == OpKind::gemm || op == OpKind::matmul;
}

std::int64_t Node::attr_int(const std::string& name, std::int64_t fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
  throw Error(ErrorKind::malformed_model, "attribute '" + name + "' is not an int", id);
}

float Node::attr_float(const std::string& name, float fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<float>(&it->second)) return *v;
  throw Error(ErrorKind::malformed_model, "attribute '" + name + "' is not a float", id);
}

std::string Node::attr_string(const std::string& name, const std::string& fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<std::string>(&it->second)) return *v;
  throw Error(ErrorKind::malformed_model, "attribute '" + name + "' is not a string", id);
}

std::vector<std::int64_t> Node::attr_ints(const std::string& name,
                                          std::vector<std::int64_t> fallback) const {
  auto it = attrs.find(name);
  if (it == attrs.end()) return fallback;
  if (auto* v = std::get_if<std::vector<std::int64_t>>(&it->second)) return *v;
  throw Error(ErrorKind::malformed_model, "attribute '" + name + "' is not an int list", id);
}

const Node& ModelGraph::node(const std::string& id) const {
  auto idx = node_index(id);
  if (!idx) throw Error(ErrorKind::invalid_argument, "no node with id '" + id + "'");
  return nodes[*idx];
}

std::optional<std::size_t> ModelGraph::node_index(const std::string& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == id) return i;
  }
  return std::nullopt;
}

bool ModelGraph::is_weight(const std::string& tensor) const { return weights.contains(tensor); }

bool ModelGraph::is_initializer(const std::string& tensor) const {
  return weights.contains(tensor) || constants.contains(tensor);
}

std::vector<std::string> ModelGraph::weight_refs(const Node& n) const {
  std::vector<std::string> refs;
  for (const auto& in : n.inputs) {
    if (is_weight(in)) refs.push_back(in);
  }
  return refs;
}

std::string ModelGraph::producer_of(const std::string& tensor) const {
  for (const auto& n : nodes) {
    if (std::find(n.outputs.begin(), n.outputs.end(), tensor) != n.outputs.end()) return n.id;
  }
  return {};
}

std::vector<std::string> ModelGraph::consumers_of(const std::string& tensor) const {
  std::vector<std::string> out;
  for (const auto& n : nodes) {
    if (std::find(n.inputs.begin(), n.inputs.end(), tensor) != n.inputs.end()) out.push_back(n.id);
  }
  return out;
}

std::vector<Edge> ModelGraph::edges() const {
  std::unordered_map<std::string, std::string> producer;
  for (const auto& n : nodes) {
    for (const auto& out : n.outputs) producer[out] = n.id;
  }
  std::vector<Edge> result;
  for (const auto& n : nodes) {
    for (const auto& in : n.inputs) {
      if (in.empty() || is_initializer(in)) continue;
      auto it = producer.find(in);
      result.push_back({in, it == producer.end() ? std::string{} : it->second, n.id});
    }
  }
  return result;
}

bool ModelGraph::is_graph_output(const std::string& tensor) const {
  return std::any_of(output_specs.begin(), output_specs.end(),
                     [&](const ValueSpec& s) { return s.name == tensor; });
}

void topological_sort(ModelGraph& g) {
  std::unordered_set<std::string> available;
  for (const auto& spec : g.input_specs) available.insert(spec.name);
  for (const auto& [name, _] : g.weights) available.insert(name);
  for (const auto& [name, _] : g.constants) available.insert(name);

  std::unordered_set<std::string> produced;
  for (const auto& n : g.nodes) {
    for (const auto& out : n.outputs) {
      if (!produced.insert(out).second || available.contains(out)) {
        throw Error(ErrorKind::malformed_model, "tensor '" + out + "' has more than one producer", n.id);
      }
    }
  }

  std::vector<Node> sorted;
  sorted.reserve(g.nodes.size());
  std::vector<bool> placed(g.nodes.size(), false);
  while (sorted.size() < g.nodes.size()) {
    bool progressed = false;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (placed[i]) continue;
      const Node& n = g.nodes[i];
      const bool ready = std::all_of(n.inputs.begin(), n.inputs.end(), [&](const std::string& in) {
        return in.empty() || available.contains(in);
      });
      if (!ready) continue;
      for (const auto& out : n.outputs) available.insert(out);
      sorted.push_back(n);
      placed[i] = true;
      progressed = true;
      break;
    }
    if (!progressed) {
      for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        if (placed[i]) continue;
        for (const auto& in : g.nodes[i].inputs) {
          if (!in.empty() && !available.contains(in) && !produced.contains(in)) {
            throw Error(ErrorKind::malformed_model, "input '" + in + "' is never produced",
                        g.nodes[i].id);
          }
        }
      }
      throw Error(ErrorKind::malformed_model, "graph contains a cycle");
    }
  }
  g.nodes = std::move(sorted);
}

std::map<std::string, Shape> infer_shapes(const ModelGraph& g) {
  std::map<std::string, Shape> shapes;
  for (const auto& spec : g.input_specs) shapes[spec.name] = concrete(spec);
  for (const auto& [name, t] : g.weights) shapes[name] = t.shape();
  for (const auto& [name, t] : g.constants) shapes[name] = t.shape();
  for (const auto& n : g.nodes) {
    if (n.outputs.empty()) throw Error(ErrorKind::malformed_model, "node has no outputs", n.id);
    if (n.op != OpKind::opaque && n.outputs.size() != 1) {
      // BatchNormalization may declare training outputs; only the first is used.
      if (n.op != OpKind::batch_norm) {
        throw Error(ErrorKind::malformed_model, "multi-output nodes are not supported", n.id);
      }
    }
    shapes[n.outputs[0]] = infer_node(g, n, shapes);
    for (std::size_t i = 1; i < n.outputs.size(); ++i) {
      auto it = g.declared_shapes.find(n.outputs[i]);
      if (it != g.declared_shapes.end()) shapes[n.outputs[i]] = it->second;
    }
  }
  for (const auto& spec : g.output_specs) {
    auto it = shapes.find(spec.name);
    if (it == shapes.end()) {
      throw Error(ErrorKind::shape_inference, "graph output '" + spec.name + "' is never produced");
    }
    const Shape declared = concrete(spec);
    if (!spec.shape.empty() && declared != it->second) {
      throw Error(ErrorKind::shape_inference, "graph output '" + spec.name + "' declared " +
                                                  shape_string(spec.shape) + " but inferred " +
                                                  shape_string(it->second));
    }
  }
  return shapes;
}

void validate(ModelGraph& g, const LoadOptions& options) {
  if (g.nodes.empty()) throw Error(ErrorKind::empty_graph, "graph has no nodes");
  if (g.input_specs.empty()) throw Error(ErrorKind::malformed_model, "graph declares no inputs");
  if (g.output_specs.empty()) throw Error(ErrorKind::malformed_model, "graph declares no outputs");

  std::unordered_set<std::string> ids;
  for (const auto& n : g.nodes) {
    if (n.id.empty()) throw Error(ErrorKind::malformed_model, "node without id");
    if (!ids.insert(n.id).second) throw Error(ErrorKind::malformed_model, "duplicate node id", n.id);
    if (n.op == OpKind::opaque && !options.exclusions.contains(n.id)) {
      throw Error(ErrorKind::unsupported_op,
                  "op '" + n.op_type + "' is not supported and the node is not excluded", n.id);
    }
    if (!n.domain.empty() && n.domain != "ai.onnx" && n.op != OpKind::opaque) {
      throw Error(ErrorKind::unsupported_op, "custom domain '" + n.domain + "'", n.id);
    }
    // Producers need constant weights so they can be sliced.
    if (is_producer(n.op)) {
      if (n.inputs.size() < 2 || !g.is_weight(n.inputs[1])) {
        throw Error(ErrorKind::unsupported_op, op_type_name(n.op).data() +
                                                   std::string(" weight must be an initializer"),
                    n.id);
      }
      if (n.inputs.size() > 2 && !n.inputs[2].empty() && !g.is_weight(n.inputs[2])) {
        throw Error(ErrorKind::unsupported_op, "bias must be an initializer", n.id);
      }
      if (g.is_initializer(n.inputs[0])) {
        throw Error(ErrorKind::unsupported_op, "producer data input must be an activation", n.id);
      }
    }
    if (n.op == OpKind::batch_norm) {
      if (n.inputs.size() != 5) throw Error(ErrorKind::malformed_model, "BatchNormalization needs 5 inputs", n.id);
      for (std::size_t i = 1; i < 5; ++i) {
        if (!g.is_weight(n.inputs[i])) {
          throw Error(ErrorKind::unsupported_op, "BatchNormalization parameters must be initializers", n.id);
        }
      }
    }
  }
  // Slicing edits weights in place per node, so a weight may have one user.
  std::unordered_map<std::string, std::string> weight_user;
  for (const auto& n : g.nodes) {
    for (const auto& in : n.inputs) {
      if (!g.is_weight(in)) continue;
      auto [it, fresh] = weight_user.emplace(in, n.id);
      if (!fresh) {
        throw Error(ErrorKind::unsupported_op,
                    "weight '" + in + "' is shared with node '" + it->second + "'", n.id);
      }
    }
  }
  topological_sort(g);
  g.shapes = infer_shapes(g);
}

bool isomorphic(const ModelGraph& a, const ModelGraph& b) {
  return a.nodes == b.nodes && a.input_specs == b.input_specs &&
         a.output_specs == b.output_specs && a.weights == b.weights && a.constants == b.constants;
}

std::int64_t producer_out_channels(const ModelGraph& g, const Node& n) {
  const Shape& w = g.weights.at(n.inputs.at(1)).shape();
  switch (n.op) {
    case OpKind::conv: return w[0];
    case OpKind::gemm: return n.attr_int("transB", 0) != 0 ? w[0] : w[1];
    case OpKind::matmul: return w[1];
    default:
      throw Error(ErrorKind::invalid_argument, "node is not a channel producer", n.id);
  }
}

}  // namespace pagcp
