#include "support.hpp"

#include <cmath>

#include "pagcp/random.hpp"

namespace pagcp::testing {

namespace {

TensorF uniform(Shape shape, Rng& rng, double lo, double hi) {
  TensorF t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t.raw()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

Node make_node(std::string id, OpKind op, std::vector<std::string> inputs) {
  Node n;
  n.op = op;
  n.op_type = std::string(op_type_name(op));
  n.outputs = {id + ".out"};
  n.id = std::move(id);
  n.inputs = std::move(inputs);
  return n;
}

}  // namespace

ModelGraph chain_model(std::uint64_t seed, std::int64_t cin, std::vector<std::int64_t> widths,
                       std::int64_t h, std::int64_t w) {
  Rng rng(seed);
  ModelGraph g;
  g.name = "chain";
  g.input_specs.push_back({"x", {-1, cin, h, w}, {"N", "", "", ""}});
  std::string x = "x";
  std::int64_t c = cin;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string id = "conv" + std::to_string(i);
    g.weights[id + ".w"] = uniform({widths[i], c, 3, 3}, rng, -0.5, 0.5);
    Node conv = make_node(id, OpKind::conv, {x, id + ".w"});
    conv.attrs["pads"] = std::vector<std::int64_t>{1, 1, 1, 1};
    g.nodes.push_back(conv);
    const std::string bn = "bn" + std::to_string(i);
    g.weights[bn + ".s"] = uniform({widths[i]}, rng, 0.8, 1.2);
    g.weights[bn + ".b"] = uniform({widths[i]}, rng, -0.1, 0.1);
    g.weights[bn + ".m"] = uniform({widths[i]}, rng, -0.1, 0.1);
    g.weights[bn + ".v"] = uniform({widths[i]}, rng, 0.8, 1.2);
    g.nodes.push_back(make_node(bn, OpKind::batch_norm, {conv.outputs[0], bn + ".s", bn + ".b", bn + ".m", bn + ".v"}));
    const std::string relu = "relu" + std::to_string(i);
    g.nodes.push_back(make_node(relu, OpKind::relu, {bn + ".out"}));
    x = relu + ".out";
    c = widths[i];
  }
  g.nodes.push_back(make_node("flatten", OpKind::flatten, {x}));
  g.weights["head.w"] = uniform({3, c * h * w}, rng, -0.2, 0.2);
  Node head = make_node("head", OpKind::gemm, {"flatten.out", "head.w"});
  head.attrs["transB"] = std::int64_t{1};
  head.outputs = {"out"};
  g.nodes.push_back(head);
  g.output_specs.push_back({"out", {-1, 3}, {"N", ""}});
  validate(g);
  return g;
}

ModelGraph dense_model(std::uint64_t seed, std::int64_t in, std::vector<std::int64_t> widths) {
  Rng rng(seed);
  ModelGraph g;
  g.name = "dense";
  g.input_specs.push_back({"x", {-1, in}, {"N", ""}});
  std::string x = "x";
  std::int64_t c = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string id = "fc" + std::to_string(i);
    g.weights[id + ".w"] = uniform({widths[i], c}, rng, -0.5, 0.5);
    Node fc = make_node(id, OpKind::gemm, {x, id + ".w"});
    fc.attrs["transB"] = std::int64_t{1};
    g.nodes.push_back(fc);
    const std::string relu = "relu" + std::to_string(i);
    g.nodes.push_back(make_node(relu, OpKind::relu, {fc.outputs[0]}));
    x = relu + ".out";
    c = widths[i];
  }
  g.weights["head.w"] = uniform({3, c}, rng, -0.5, 0.5);
  Node head = make_node("head", OpKind::gemm, {x, "head.w"});
  head.attrs["transB"] = std::int64_t{1};
  head.outputs = {"out"};
  g.nodes.push_back(head);
  g.output_specs.push_back({"out", {-1, 3}, {"N", ""}});
  validate(g);
  return g;
}

bool close(const TensorF& a, const TensorF& b, double rel) {
  if (a.shape() != b.shape()) return false;
  const double scale = std::max<double>(b.data().cwiseAbs().maxCoeff(), 1e-30);
  return (a.data() - b.data()).cwiseAbs().maxCoeff() <= rel * scale;
}

TensorF random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return uniform(std::move(shape), rng, -1.0, 1.0);
}

std::filesystem::path fixture_dir() { return PAGCP_FIXTURE_DIR; }

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace pagcp::testing
