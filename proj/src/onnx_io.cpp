#include "pagcp/onnx_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "onnx_subset.pb.h"

static_assert(std::endian::native == std::endian::little,
              "raw_data tensors are little-endian; big-endian hosts need byte swapping");

namespace pagcp {

namespace {

constexpr std::int64_t kIrVersion = 8;

Shape dims_of(const onnx::TensorProto& t) { return Shape(t.dims().begin(), t.dims().end()); }

void check_location(const onnx::TensorProto& t) {
  if (t.data_location() == onnx::TensorProto::EXTERNAL || t.external_data_size() > 0) {
    throw Error(ErrorKind::malformed_model, "external tensor data is not supported: " + t.name());
  }
}

TensorF float_tensor(const onnx::TensorProto& t) {
  check_location(t);
  TensorF out(dims_of(t));
  const auto n = static_cast<std::size_t>(out.size());
  if (t.has_raw_data()) {
    if (t.raw_data().size() != n * sizeof(float)) {
      throw Error(ErrorKind::malformed_model, "raw_data size mismatch for tensor " + t.name());
    }
    std::memcpy(out.raw(), t.raw_data().data(), n * sizeof(float));
  } else {
    if (static_cast<std::size_t>(t.float_data_size()) != n) {
      throw Error(ErrorKind::malformed_model, "float_data size mismatch for tensor " + t.name());
    }
    std::copy(t.float_data().begin(), t.float_data().end(), out.raw());
  }
  return out;
}

TensorI64 int64_tensor(const onnx::TensorProto& t) {
  check_location(t);
  TensorI64 out(dims_of(t));
  const auto n = static_cast<std::size_t>(out.size());
  if (t.has_raw_data()) {
    if (t.raw_data().size() != n * sizeof(std::int64_t)) {
      throw Error(ErrorKind::malformed_model, "raw_data size mismatch for tensor " + t.name());
    }
    std::memcpy(out.raw(), t.raw_data().data(), n * sizeof(std::int64_t));
  } else {
    if (static_cast<std::size_t>(t.int64_data_size()) != n) {
      throw Error(ErrorKind::malformed_model, "int64_data size mismatch for tensor " + t.name());
    }
    std::copy(t.int64_data().begin(), t.int64_data().end(), out.raw());
  }
  return out;
}

template <typename Scalar>
void fill_proto(onnx::TensorProto& p, const Tensor<Scalar>& t, const std::string& name,
                int data_type) {
  p.set_name(name);
  p.set_data_type(data_type);
  for (auto d : t.shape()) p.add_dims(d);
  p.set_raw_data(std::string(reinterpret_cast<const char*>(t.raw()),
                             static_cast<std::size_t>(t.size()) * sizeof(Scalar)));
}

ValueSpec value_spec(const onnx::ValueInfoProto& v) {
  ValueSpec spec;
  spec.name = v.name();
  if (!v.has_type()) return spec;
  if (!v.type().has_tensor_type()) {
    throw Error(ErrorKind::malformed_model, "value '" + v.name() + "' is not a tensor");
  }
  const auto& tt = v.type().tensor_type();
  if (tt.has_elem_type() && tt.elem_type() != onnx::TensorProto::FLOAT) {
    throw Error(ErrorKind::unsupported_op, "value '" + v.name() + "' is not float32");
  }
  if (!tt.has_shape()) return spec;
  for (const auto& d : tt.shape().dim()) {
    if (d.has_dim_value()) {
      spec.shape.push_back(d.dim_value());
      spec.dim_params.emplace_back();
    } else {
      spec.shape.push_back(-1);
      spec.dim_params.push_back(d.has_dim_param() ? d.dim_param() : std::string{});
    }
  }
  return spec;
}

void fill_value_info(onnx::ValueInfoProto& v, const ValueSpec& spec, bool with_shape) {
  v.set_name(spec.name);
  auto* tt = v.mutable_type()->mutable_tensor_type();
  tt->set_elem_type(onnx::TensorProto::FLOAT);
  if (!with_shape) return;
  auto* shape = tt->mutable_shape();
  for (std::size_t i = 0; i < spec.shape.size(); ++i) {
    auto* d = shape->add_dim();
    if (spec.shape[i] >= 0) {
      d->set_dim_value(spec.shape[i]);
    } else {
      d->set_dim_param(i < spec.dim_params.size() ? spec.dim_params[i] : std::string{});
    }
  }
}

AttrValue attribute_value(const onnx::AttributeProto& a, const std::string& node_id) {
  using A = onnx::AttributeProto;
  auto type = a.type();
  if (type == A::UNDEFINED) {
    // Pre-IR-3 files omit the discriminator; infer it from the populated field.
    if (a.has_i()) type = A::INT;
    else if (a.has_f()) type = A::FLOAT;
    else if (a.has_s()) type = A::STRING;
    else if (a.ints_size()) type = A::INTS;
    else if (a.floats_size()) type = A::FLOATS;
  }
  switch (type) {
    case A::INT: return a.i();
    case A::FLOAT: return a.f();
    case A::STRING: return a.s();
    case A::INTS: return std::vector<std::int64_t>(a.ints().begin(), a.ints().end());
    case A::FLOATS: return std::vector<float>(a.floats().begin(), a.floats().end());
    default:
      throw Error(ErrorKind::unsupported_op,
                  "attribute '" + a.name() + "' has an unsupported type", node_id);
  }
}

void fill_attribute(onnx::AttributeProto& a, const std::string& name, const AttrValue& value) {
  using A = onnx::AttributeProto;
  a.set_name(name);
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          a.set_type(A::INT);
          a.set_i(v);
        } else if constexpr (std::is_same_v<T, float>) {
          a.set_type(A::FLOAT);
          a.set_f(v);
        } else if constexpr (std::is_same_v<T, std::string>) {
          a.set_type(A::STRING);
          a.set_s(v);
        } else if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
          a.set_type(A::INTS);
          for (auto x : v) a.add_ints(x);
        } else {
          a.set_type(A::FLOATS);
          for (auto x : v) a.add_floats(x);
        }
      },
      value);
}

}  // namespace

ModelGraph load_model(std::string_view bytes, const LoadOptions& options) {
  onnx::ModelProto model;
  if (!model.ParseFromArray(bytes.data(), static_cast<int>(bytes.size()))) {
    throw Error(ErrorKind::malformed_model, "bytes are not a valid ONNX ModelProto");
  }
  if (!model.has_graph()) throw Error(ErrorKind::malformed_model, "model has no graph");
  const auto& gp = model.graph();

  ModelGraph g;
  g.name = gp.name();
  g.source_hash = sha256_hex(bytes);
  for (const auto& op : model.opset_import()) {
    if (op.domain().empty() || op.domain() == "ai.onnx") g.opset = op.version();
  }

  for (const auto& t : gp.initializer()) {
    if (t.name().empty()) throw Error(ErrorKind::malformed_model, "unnamed initializer");
    switch (t.data_type()) {
      case onnx::TensorProto::FLOAT: g.weights.emplace(t.name(), float_tensor(t)); break;
      case onnx::TensorProto::INT64: g.constants.emplace(t.name(), int64_tensor(t)); break;
      default:
        throw Error(ErrorKind::unsupported_op,
                    "initializer '" + t.name() + "' has unsupported data type " +
                        std::to_string(t.data_type()));
    }
  }
  for (const auto& v : gp.input()) {
    if (g.is_initializer(v.name())) continue;
    g.input_specs.push_back(value_spec(v));
  }
  for (const auto& v : gp.output()) g.output_specs.push_back(value_spec(v));
  for (const auto& v : gp.value_info()) {
    ValueSpec spec = value_spec(v);
    Shape s = spec.shape;
    for (auto& d : s) d = d < 0 ? 1 : d;
    g.declared_shapes[spec.name] = s;
  }

  for (int i = 0; i < gp.node_size(); ++i) {
    const auto& np = gp.node(i);
    Node n;
    n.id = np.name().empty() ? np.op_type() + "_" + std::to_string(i) : np.name();
    n.op_type = np.op_type();
    n.domain = np.domain();
    n.inputs.assign(np.input().begin(), np.input().end());
    n.outputs.assign(np.output().begin(), np.output().end());
    auto kind = (n.domain.empty() || n.domain == "ai.onnx") ? op_kind_from_type(n.op_type)
                                                            : std::nullopt;
    n.op = kind.value_or(OpKind::opaque);
    for (const auto& a : np.attribute()) {
      if (n.op == OpKind::opaque) {
        n.raw_attrs[a.name()] = a.SerializeAsString();
      } else {
        n.attrs[a.name()] = attribute_value(a, n.id);
      }
    }
    g.nodes.push_back(std::move(n));
  }

  validate(g, options);
  return g;
}

ModelGraph load_model_file(const std::filesystem::path& path, const LoadOptions& options) {
  return load_model(read_file(path), options);
}

std::string export_model(const ModelGraph& g) {
  onnx::ModelProto model;
  model.set_ir_version(kIrVersion);
  model.set_producer_name("pagcp");
  model.set_producer_version("1.0");
  auto* opset = model.add_opset_import();
  opset->set_domain("");
  opset->set_version(g.opset);

  auto* gp = model.mutable_graph();
  gp->set_name(g.name);
  for (const auto& n : g.nodes) {
    auto* np = gp->add_node();
    np->set_name(n.id);
    np->set_op_type(n.op == OpKind::opaque ? n.op_type : std::string(op_type_name(n.op)));
    if (!n.domain.empty()) np->set_domain(n.domain);
    for (const auto& in : n.inputs) np->add_input(in);
    for (const auto& out : n.outputs) np->add_output(out);
    for (const auto& [name, value] : n.attrs) fill_attribute(*np->add_attribute(), name, value);
    for (const auto& [name, raw] : n.raw_attrs) np->add_attribute()->ParseFromString(raw);
  }
  for (const auto& [name, t] : g.weights) {
    fill_proto(*gp->add_initializer(), t, name, onnx::TensorProto::FLOAT);
  }
  for (const auto& [name, t] : g.constants) {
    fill_proto(*gp->add_initializer(), t, name, onnx::TensorProto::INT64);
  }
  for (const auto& spec : g.input_specs) fill_value_info(*gp->add_input(), spec, true);
  for (const auto& spec : g.output_specs) {
    fill_value_info(*gp->add_output(), spec, !spec.shape.empty());
  }
  for (const auto& n : g.nodes) {
    if (n.op != OpKind::opaque) continue;
    for (const auto& out : n.outputs) {
      auto it = g.declared_shapes.find(out);
      if (it == g.declared_shapes.end()) continue;
      fill_value_info(*gp->add_value_info(), ValueSpec{out, it->second, {}}, true);
    }
  }
  std::string bytes;
  model.SerializeToString(&bytes);
  return bytes;
}

void save_model_file(const ModelGraph& g, const std::filesystem::path& path) {
  write_file(path, export_model(g));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

TensorF parse_tensor_proto(std::string_view bytes, std::string* name) {
  onnx::TensorProto t;
  if (!t.ParseFromArray(bytes.data(), static_cast<int>(bytes.size()))) {
    throw Error(ErrorKind::malformed_model, "bytes are not a valid TensorProto");
  }
  if (t.data_type() != onnx::TensorProto::FLOAT) {
    throw Error(ErrorKind::unsupported_op, "only float32 tensor files are supported");
  }
  if (name) *name = t.name();
  return float_tensor(t);
}

std::string serialize_tensor_proto(const TensorF& t, const std::string& name) {
  onnx::TensorProto p;
  fill_proto(p, t, name, onnx::TensorProto::FLOAT);
  return p.SerializeAsString();
}

TensorF read_tensor_file(const std::filesystem::path& path) {
  return parse_tensor_proto(read_file(path));
}

void write_tensor_file(const TensorF& t, const std::filesystem::path& path,
                       const std::string& name) {
  write_file(path, serialize_tensor_proto(t, name));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to '" + path.string() + "'");
}

}  // namespace pagcp
