#include "pagcp/toy_models.hpp"

#include <cmath>

#include "pagcp/random.hpp"

namespace pagcp {

namespace {

ValueSpec batched(const std::string& name, Shape shape) {
  std::vector<std::string> params(shape.size());
  params[0] = "N";
  return {name, std::move(shape), std::move(params)};
}

class Builder {
 public:
  Builder(std::string name, std::uint64_t seed) : rng_(seed) { g_.name = std::move(name); }

  void scale(const std::string& name, float factor) { g_.weights.at(name).data() *= factor; }

  void input(const std::string& name, Shape shape) { g_.input_specs.push_back(batched(name, shape)); }
  void output(const std::string& name, Shape shape) { g_.output_specs.push_back(batched(name, shape)); }

  /// Conv k×k, stride s, "same"-style padding. Bias only when no BN follows.
  std::string conv(const std::string& id, const std::string& x, std::int64_t cin, std::int64_t cout,
                   std::int64_t k, std::int64_t stride, bool bias) {
    const std::int64_t pad = k / 2;
    weight(id + ".weight", {cout, cin, k, k}, cin * k * k, 0);
    std::vector<std::string> inputs{x, id + ".weight"};
    if (bias) {
      uniform(id + ".bias", {cout}, -0.1, 0.1);
      inputs.push_back(id + ".bias");
    }
    Node& n = node(id, OpKind::conv, inputs);
    n.attrs["kernel_shape"] = std::vector<std::int64_t>{k, k};
    n.attrs["strides"] = std::vector<std::int64_t>{stride, stride};
    n.attrs["pads"] = std::vector<std::int64_t>{pad, pad, pad, pad};
    return n.outputs[0];
  }

  std::string bn(const std::string& id, const std::string& x, std::int64_t c) {
    uniform(id + ".scale", {c}, 0.8, 1.2);
    uniform(id + ".bias", {c}, -0.1, 0.1);
    uniform(id + ".mean", {c}, -0.1, 0.1);
    uniform(id + ".var", {c}, 0.8, 1.2);
    Node& n = node(id, OpKind::batch_norm, {x, id + ".scale", id + ".bias", id + ".mean", id + ".var"});
    n.attrs["epsilon"] = 1e-5f;
    return n.outputs[0];
  }

  /// Gemm; weight laid out [out, in] when trans_b, else [in, out].
  std::string gemm(const std::string& id, const std::string& x, std::int64_t in, std::int64_t out,
                   bool trans_b, const std::string& output = {}) {
    if (trans_b) {
      weight(id + ".weight", {out, in}, in, 0);
    } else {
      weight(id + ".weight", {in, out}, in, 1);
    }
    uniform(id + ".bias", {out}, -0.1, 0.1);
    Node& n = node(id, OpKind::gemm, {x, id + ".weight", id + ".bias"}, output);
    if (trans_b) n.attrs["transB"] = std::int64_t{1};
    return n.outputs[0];
  }

  std::string matmul_add(const std::string& id, const std::string& x, std::int64_t in, std::int64_t out) {
    weight(id + ".weight", {in, out}, in, 1);
    const std::string y = node(id, OpKind::matmul, {x, id + ".weight"}).outputs[0];
    uniform(id + "_bias.value", {out}, -0.1, 0.1);
    return node(id + "_bias", OpKind::add, {y, id + "_bias.value"}).outputs[0];
  }

  std::string unary(const std::string& id, OpKind op, const std::string& x) {
    return node(id, op, {x}).outputs[0];
  }

  std::string pool(const std::string& id, OpKind op, const std::string& x, std::int64_t k) {
    Node& n = node(id, op, {x});
    n.attrs["kernel_shape"] = std::vector<std::int64_t>{k, k};
    n.attrs["strides"] = std::vector<std::int64_t>{k, k};
    return n.outputs[0];
  }

  std::string add(const std::string& id, const std::string& a, const std::string& b) {
    return node(id, OpKind::add, {a, b}).outputs[0];
  }

  std::string concat(const std::string& id, std::vector<std::string> xs) {
    Node& n = node(id, OpKind::concat, std::move(xs));
    n.attrs["axis"] = std::int64_t{1};
    return n.outputs[0];
  }

  std::string flatten(const std::string& id, const std::string& x) {
    Node& n = node(id, OpKind::flatten, {x});
    n.attrs["axis"] = std::int64_t{1};
    return n.outputs[0];
  }

  std::string reshape_flat(const std::string& id, const std::string& x) {
    TensorI64 target({2});
    target.data() << 0, -1;
    g_.constants[id + ".shape"] = target;
    return node(id, OpKind::reshape, {x, id + ".shape"}).outputs[0];
  }

  ModelGraph finish() {
    validate(g_);
    return std::move(g_);
  }

 private:
  Node& node(const std::string& id, OpKind op, std::vector<std::string> inputs,
             const std::string& output = {}) {
    Node n;
    n.id = id;
    n.op = op;
    n.op_type = std::string(op_type_name(op));
    n.inputs = std::move(inputs);
    n.outputs = {output.empty() ? id + ".out" : output};
    g_.nodes.push_back(std::move(n));
    return g_.nodes.back();
  }

  void uniform(const std::string& name, Shape shape, double lo, double hi) {
    TensorF t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<float>(rng_.uniform(lo, hi));
    g_.weights[name] = std::move(t);
  }

  // Kaiming-uniform with a per-filter scale drawn log-uniformly from [0.2, 1],
  // so filters differ clearly in l1 norm.
  void weight(const std::string& name, Shape shape, std::int64_t fan_in, std::int64_t out_axis) {
    TensorF t(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const std::int64_t outs = shape[static_cast<std::size_t>(out_axis)];
    std::vector<double> scale(static_cast<std::size_t>(outs));
    for (auto& s : scale) s = std::exp(rng_.uniform(std::log(0.2), 0.0));
    std::int64_t inner = 1;
    for (std::size_t d = static_cast<std::size_t>(out_axis) + 1; d < shape.size(); ++d) inner *= shape[d];
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const std::int64_t o = (i / inner) % outs;
      t.raw()[i] = static_cast<float>(rng_.uniform(-bound, bound) * scale[static_cast<std::size_t>(o)]);
    }
    g_.weights[name] = std::move(t);
  }

  ModelGraph g_;
  Rng rng_;
};

ModelGraph build_a(std::uint64_t seed) {
  Builder b("toy_mt_a", seed);
  b.input("input", {-1, 3, 16, 16});
  auto x = b.conv("stem_conv", "input", 3, 16, 3, 1, false);
  x = b.bn("stem_bn", x, 16);
  const auto stem = b.unary("stem_relu", OpKind::relu, x);

  auto y = b.conv("b1_conv1", stem, 16, 16, 3, 1, false);
  y = b.bn("b1_bn1", y, 16);
  y = b.unary("b1_relu1", OpKind::relu, y);
  y = b.conv("b1_conv2", y, 16, 16, 3, 1, false);
  y = b.bn("b1_bn2", y, 16);
  y = b.add("b1_add", y, stem);
  y = b.unary("b1_relu2", OpKind::relu, y);
  const auto pooled = b.pool("pool1", OpKind::max_pool, y, 2);

  auto a = b.conv("br_a_conv", pooled, 16, 24, 3, 1, false);
  a = b.bn("br_a_bn", a, 24);
  a = b.unary("br_a_relu", OpKind::relu, a);
  auto c = b.conv("br_b_conv", pooled, 16, 8, 1, 1, false);
  c = b.bn("br_b_bn", c, 8);
  c = b.unary("br_b_relu", OpKind::relu, c);
  const auto cat = b.concat("cat", {a, c});

  auto m = b.conv("mid_conv", cat, 32, 32, 3, 2, false);
  m = b.bn("mid_bn", m, 32);
  m = b.unary("mid_relu", OpKind::relu, m);

  auto h = b.conv("cls_conv", m, 32, 16, 3, 1, false);
  h = b.bn("cls_bn", h, 16);
  h = b.unary("cls_relu", OpKind::relu, h);
  h = b.unary("cls_gap", OpKind::global_average_pool, h);
  h = b.flatten("cls_flatten", h);
  h = b.gemm("cls_fc1", h, 16, 24, true);
  h = b.unary("cls_fc1_relu", OpKind::relu, h);
  b.gemm("cls_fc2", h, 24, 10, true, "logits");
  b.scale("cls_fc2.weight", 8.0f);  // confident logits

  auto r = b.conv("reg_conv", m, 32, 8, 1, 1, false);
  r = b.bn("reg_bn", r, 8);
  r = b.unary("reg_relu", OpKind::relu, r);
  r = b.flatten("reg_flatten", r);
  b.gemm("reg_fc", r, 128, 4, true, "regression");

  b.output("logits", {-1, 10});
  b.output("regression", {-1, 4});
  return b.finish();
}

ModelGraph build_b(std::uint64_t seed) {
  Builder b("toy_mt_b", seed);
  b.input("input", {-1, 3, 16, 16});
  auto x = b.conv("stem_conv", "input", 3, 12, 3, 1, true);
  const auto stem = b.unary("stem_relu", OpKind::relu, x);

  auto y = b.conv("b1_conv1", stem, 12, 12, 3, 1, false);
  y = b.bn("b1_bn1", y, 12);
  y = b.unary("b1_relu1", OpKind::relu, y);
  y = b.conv("b1_conv2", y, 12, 12, 3, 1, false);
  y = b.bn("b1_bn2", y, 12);
  y = b.add("b1_add", stem, y);
  y = b.unary("b1_relu2", OpKind::relu, y);
  const auto pooled = b.pool("pool1", OpKind::average_pool, y, 2);

  auto a = b.conv("br_a_conv", pooled, 12, 16, 3, 1, false);
  a = b.bn("br_a_bn", a, 16);
  a = b.unary("br_a_relu", OpKind::relu, a);
  auto c = b.conv("br_b_conv", pooled, 12, 8, 1, 1, true);
  c = b.unary("br_b_relu", OpKind::relu, c);
  const auto cat = b.concat("cat", {a, c});

  auto m = b.conv("mid_conv", cat, 24, 24, 3, 2, false);
  m = b.bn("mid_bn", m, 24);
  m = b.unary("mid_relu", OpKind::relu, m);

  auto h = b.unary("cls_gap", OpKind::global_average_pool, m);
  h = b.reshape_flat("cls_reshape", h);
  h = b.matmul_add("cls_fc1", h, 24, 16);
  h = b.unary("cls_fc1_relu", OpKind::relu, h);
  b.gemm("cls_fc2", h, 16, 10, false, "logits");
  b.scale("cls_fc2.weight", 8.0f);

  auto r = b.conv("reg_conv", m, 24, 8, 1, 1, true);
  r = b.unary("reg_relu", OpKind::relu, r);
  r = b.flatten("reg_flatten", r);
  b.gemm("reg_fc", r, 128, 4, true, "regression");

  b.output("logits", {-1, 10});
  b.output("regression", {-1, 4});
  return b.finish();
}

}  // namespace

std::string_view to_string(ToyArch arch) {
  return arch == ToyArch::toy_mt_a ? "toy_mt_a" : "toy_mt_b";
}

std::optional<ToyArch> toy_arch_from_name(std::string_view name) {
  if (name == "toy_mt_a") return ToyArch::toy_mt_a;
  if (name == "toy_mt_b") return ToyArch::toy_mt_b;
  return std::nullopt;
}

ModelGraph build_toy_model(std::uint64_t seed, ToyArch arch) {
  return arch == ToyArch::toy_mt_a ? build_a(seed) : build_b(seed);
}

std::set<std::string> toy_head_nodes(ToyArch) { return {"cls_fc2", "reg_fc"}; }

}  // namespace pagcp
