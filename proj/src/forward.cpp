#include "pagcp/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace pagcp {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

struct Window {
  std::int64_t kh, kw, sh, sw, ph, pw, dh, dw;
};

Window window_of(const Node& n, std::int64_t kh, std::int64_t kw) {
  const auto strides = n.attr_ints("strides", {1, 1});
  const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
  const auto dil = n.attr_ints("dilations", {1, 1});
  return {kh, kw, strides[0], strides[1], pads[0], pads[1], dil[0], dil[1]};
}

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p_begin,
                        std::int64_t p_end, std::int64_t d) {
  return (in + p_begin + p_end - (d * (k - 1) + 1)) / s + 1;
}

TensorF conv2d(const Node& n, const TensorF& x, const TensorF& w, const TensorF* bias) {
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t M = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t group = n.attr_int("group", 1);
  if (Cg * group != C) throw Error(ErrorKind::evaluation, "input channels do not match weight", n.id);
  const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
  const Window win = window_of(n, kh, kw);
  const std::int64_t Ho = out_extent(H, kh, win.sh, pads[0], pads[2], win.dh);
  const std::int64_t Wo = out_extent(W, kw, win.sw, pads[1], pads[3], win.dw);
  const std::int64_t Mg = M / group;
  const std::int64_t patch = Cg * kh * kw;

  TensorF y({N, M, Ho, Wo});
  RowMatrix col(patch, Ho * Wo);
  for (std::int64_t b = 0; b < N; ++b) {
    for (std::int64_t gi = 0; gi < group; ++gi) {
      // im2col for this sample and group
      for (std::int64_t c = 0; c < Cg; ++c) {
        const float* plane = x.raw() + ((b * C) + gi * Cg + c) * H * W;
        for (std::int64_t i = 0; i < kh; ++i) {
          for (std::int64_t j = 0; j < kw; ++j) {
            float* row = col.data() + ((c * kh + i) * kw + j) * Ho * Wo;
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
              const std::int64_t ih = oh * win.sh - win.ph + i * win.dh;
              for (std::int64_t ow = 0; ow < Wo; ++ow) {
                const std::int64_t iw = ow * win.sw - win.pw + j * win.dw;
                row[oh * Wo + ow] =
                    (ih >= 0 && ih < H && iw >= 0 && iw < W) ? plane[ih * W + iw] : 0.0f;
              }
            }
          }
        }
      }
      ConstRowMap wm(w.raw() + gi * Mg * patch, Mg, patch);
      RowMap ym(y.raw() + (b * M + gi * Mg) * Ho * Wo, Mg, Ho * Wo);
      ym.noalias() = wm * col;
      if (bias) {
        for (std::int64_t m = 0; m < Mg; ++m) ym.row(m).array() += bias->raw()[gi * Mg + m];
      }
    }
  }
  return y;
}

TensorF gemm(const Node& n, const TensorF& a, const TensorF& b, const TensorF* c) {
  const bool tb = n.attr_int("transB", 0) != 0;
  const float alpha = n.attr_float("alpha", 1.0f);
  const float beta = n.attr_float("beta", 1.0f);
  ConstRowMap am(a.raw(), a.dim(0), a.dim(1));
  ConstRowMap bm(b.raw(), b.dim(0), b.dim(1));
  const std::int64_t cols = tb ? b.dim(0) : b.dim(1);
  TensorF y({a.dim(0), cols});
  RowMap ym(y.raw(), a.dim(0), cols);
  if (tb) {
    ym.noalias() = am * bm.transpose();
  } else {
    ym.noalias() = am * bm;
  }
  if (alpha != 1.0f) ym *= alpha;
  if (c) {
    for (std::int64_t r = 0; r < ym.rows(); ++r) {
      for (std::int64_t k = 0; k < cols; ++k) ym(r, k) += beta * c->raw()[k];
    }
  }
  return y;
}

TensorF matmul(const TensorF& a, const TensorF& b) {
  ConstRowMap am(a.raw(), a.dim(0), a.dim(1));
  ConstRowMap bm(b.raw(), b.dim(0), b.dim(1));
  TensorF y({a.dim(0), b.dim(1)});
  RowMap(y.raw(), a.dim(0), b.dim(1)).noalias() = am * bm;
  return y;
}

TensorF batch_norm(const Node& n, const TensorF& x, const TensorF& scale, const TensorF& shift,
                   const TensorF& mean, const TensorF& var) {
  const float eps = n.attr_float("epsilon", 1e-5f);
  const std::int64_t N = x.dim(0), C = x.dim(1);
  const std::int64_t inner = x.size() / std::max<std::int64_t>(N * C, 1);
  TensorF y(x.shape());
  for (std::int64_t b = 0; b < N; ++b) {
    for (std::int64_t c = 0; c < C; ++c) {
      const float s = scale.raw()[c] / std::sqrt(var.raw()[c] + eps);
      const float m = mean.raw()[c];
      const float t = shift.raw()[c];
      const float* src = x.raw() + (b * C + c) * inner;
      float* dst = y.raw() + (b * C + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] = (src[i] - m) * s + t;
    }
  }
  return y;
}

TensorF pool(const Node& n, const TensorF& x, bool is_max) {
  const auto kernel = n.attr_ints("kernel_shape", {});
  const auto pads = n.attr_ints("pads", {0, 0, 0, 0});
  const Window win = window_of(n, kernel[0], kernel[1]);
  const bool include_pad = n.attr_int("count_include_pad", 0) != 0;
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = out_extent(H, win.kh, win.sh, pads[0], pads[2], 1);
  const std::int64_t Wo = out_extent(W, win.kw, win.sw, pads[1], pads[3], 1);
  TensorF y({N, C, Ho, Wo});
  for (std::int64_t p = 0; p < N * C; ++p) {
    const float* plane = x.raw() + p * H * W;
    float* out = y.raw() + p * Ho * Wo;
    for (std::int64_t oh = 0; oh < Ho; ++oh) {
      for (std::int64_t ow = 0; ow < Wo; ++ow) {
        float acc = is_max ? -std::numeric_limits<float>::infinity() : 0.0f;
        std::int64_t count = 0;
        for (std::int64_t i = 0; i < win.kh; ++i) {
          const std::int64_t ih = oh * win.sh - win.ph + i;
          for (std::int64_t j = 0; j < win.kw; ++j) {
            const std::int64_t iw = ow * win.sw - win.pw + j;
            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
            const float v = plane[ih * W + iw];
            acc = is_max ? std::max(acc, v) : acc + v;
            ++count;
          }
        }
        if (!is_max) acc /= static_cast<float>(include_pad ? win.kh * win.kw : count);
        out[oh * Wo + ow] = acc;
      }
    }
  }
  return y;
}

TensorF global_average_pool(const TensorF& x) {
  const std::int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  TensorF y({N, C, 1, 1});
  ConstRowMap xm(x.raw(), N * C, HW);
  Eigen::Map<Eigen::VectorXf>(y.raw(), N * C) = xm.rowwise().sum() / static_cast<float>(HW);
  return y;
}

TensorF broadcast_add(const TensorF& a, const TensorF& b) {
  if (a.shape() == b.shape()) return TensorF(a.shape(), a.data() + b.data());
  const std::size_t rank = std::max(a.shape().size(), b.shape().size());
  Shape out(rank);
  std::vector<std::int64_t> sa(rank, 0), sb(rank, 0);
  auto strides = [rank](const Shape& s, std::vector<std::int64_t>& st) {
    std::int64_t step = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t d = s.size() - 1 - i;
      const std::size_t o = rank - 1 - i;
      st[o] = s[d] == 1 ? 0 : step;
      step *= s[d];
    }
  };
  strides(a.shape(), sa);
  strides(b.shape(), sb);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.shape().size() ? 1 : a.shape()[i - (rank - a.shape().size())];
    const std::int64_t db = i < rank - b.shape().size() ? 1 : b.shape()[i - (rank - b.shape().size())];
    out[i] = std::max(da, db);
  }
  TensorF y(out);
  std::vector<std::int64_t> idx(rank, 0);
  for (std::int64_t flat = 0; flat < y.size(); ++flat) {
    std::int64_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      oa += idx[d] * sa[d];
      ob += idx[d] * sb[d];
    }
    y.raw()[flat] = a.raw()[oa] + b.raw()[ob];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  return y;
}

TensorF concat(const Node& n, std::span<const TensorF* const> inputs) {
  const std::int64_t rank = inputs[0]->rank();
  std::int64_t axis = n.attr_int("axis", 1);
  if (axis < 0) axis += rank;
  Shape out = inputs[0]->shape();
  out[static_cast<std::size_t>(axis)] = 0;
  for (const TensorF* t : inputs) out[static_cast<std::size_t>(axis)] += t->dim(axis);
  std::int64_t outer = 1;
  for (std::int64_t d = 0; d < axis; ++d) outer *= out[static_cast<std::size_t>(d)];
  TensorF y(out);
  float* dst = y.raw();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const TensorF* t : inputs) {
      const std::int64_t block = t->size() / outer;
      std::copy_n(t->raw() + o * block, block, dst);
      dst += block;
    }
  }
  return y;
}

TensorF reshaped(const TensorF& x, Shape shape) { return TensorF(std::move(shape), x.data()); }

TensorF reshape(const Node& n, const TensorF& x, const TensorI64& target) {
  Shape s(target.values().begin(), target.values().end());
  std::int64_t known = 1;
  int infer_at = -1;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (s[d] == 0) s[d] = x.dim(static_cast<std::int64_t>(d));
    if (s[d] == -1) {
      infer_at = static_cast<int>(d);
    } else {
      known *= s[d];
    }
  }
  if (infer_at >= 0) s[static_cast<std::size_t>(infer_at)] = x.size() / known;
  if (numel(s) != x.size()) throw Error(ErrorKind::evaluation, "reshape size mismatch", n.id);
  return reshaped(x, std::move(s));
}

}  // namespace

void zero_channels(TensorF& t, std::span<const std::int64_t> channels) {
  if (channels.empty()) return;
  const std::int64_t N = t.dim(0), C = t.dim(1);
  const std::int64_t inner = t.size() / std::max<std::int64_t>(N * C, 1);
  for (std::int64_t b = 0; b < N; ++b) {
    for (std::int64_t c : channels) {
      if (c < 0 || c >= C) throw Error(ErrorKind::invalid_argument, "mask channel out of range");
      std::fill_n(t.raw() + (b * C + c) * inner, inner, 0.0f);
    }
  }
}

TensorF run_node(const ModelGraph& g, const Node& n, std::span<const TensorF* const> in) {
  auto opt = [&](std::size_t i) -> const TensorF* {
    return i < in.size() && n.inputs[i].size() ? in[i] : nullptr;
  };
  switch (n.op) {
    case OpKind::conv: return conv2d(n, *in[0], *in[1], opt(2));
    case OpKind::gemm: return gemm(n, *in[0], *in[1], opt(2));
    case OpKind::matmul: return matmul(*in[0], *in[1]);
    case OpKind::batch_norm: return batch_norm(n, *in[0], *in[1], *in[2], *in[3], *in[4]);
    case OpKind::relu: {
      const TensorF& x = *in[0];
      return TensorF(x.shape(), x.data().cwiseMax(0.0f));
    }
    case OpKind::max_pool: return pool(n, *in[0], true);
    case OpKind::average_pool: return pool(n, *in[0], false);
    case OpKind::global_average_pool: return global_average_pool(*in[0]);
    case OpKind::add: return broadcast_add(*in[0], *in[1]);
    case OpKind::concat: return concat(n, in);
    case OpKind::flatten: {
      const TensorF& x = *in[0];
      const std::int64_t axis = n.attr_int("axis", 1);
      std::int64_t outer = 1;
      for (std::int64_t d = 0; d < axis; ++d) outer *= x.dim(d);
      return reshaped(x, {outer, x.size() / std::max<std::int64_t>(outer, 1)});
    }
    case OpKind::reshape: return reshape(n, *in[0], g.constants.at(n.inputs[1]));
    case OpKind::opaque:
      throw Error(ErrorKind::evaluation,
                  "op '" + n.op_type + "' cannot be executed by the built-in engine", n.id);
  }
  throw Error(ErrorKind::evaluation, "unhandled op", n.id);
}

namespace {

std::int64_t check_inputs(const ModelGraph& g, const TensorMap& inputs) {
  std::int64_t batch = -1;
  for (const auto& spec : g.input_specs) {
    auto it = inputs.find(spec.name);
    if (it == inputs.end()) {
      throw Error(ErrorKind::invalid_argument, "missing graph input '" + spec.name + "'");
    }
    const Shape& s = it->second.shape();
    bool ok = s.size() == spec.shape.size();
    for (std::size_t d = 1; ok && d < s.size(); ++d) {
      ok = spec.shape[d] < 0 || spec.shape[d] == s[d];
    }
    if (!ok) {
      throw Error(ErrorKind::invalid_argument, "input '" + spec.name + "' has shape " +
                                                   shape_string(s) + ", expected " +
                                                   shape_string(spec.shape));
    }
    if (batch >= 0 && s[0] != batch) throw Error(ErrorKind::invalid_argument, "inputs disagree on batch size");
    batch = s[0];
  }
  return batch;
}

const TensorF* lookup(const ModelGraph& g, const TensorMap& local, const TensorMap* base,
                      const std::string& name, const Node& n) {
  if (auto it = local.find(name); it != local.end()) return &it->second;
  if (base) {
    if (auto it = base->find(name); it != base->end()) return &it->second;
  }
  if (auto it = g.weights.find(name); it != g.weights.end()) return &it->second;
  if (g.constants.contains(name)) return nullptr;
  throw Error(ErrorKind::evaluation, "tensor '" + name + "' is not available", n.id);
}

void finish(const Node& n, TensorF& t, const ChannelMask& mask) {
  if (!t.data().allFinite()) throw Error(ErrorKind::evaluation, "non-finite value in output", n.id);
  if (auto it = mask.find(n.outputs[0]); it != mask.end()) zero_channels(t, it->second);
}

TensorF compute(const ModelGraph& g, const Node& n, const TensorMap& local, const TensorMap* base) {
  std::vector<const TensorF*> args;
  args.reserve(n.inputs.size());
  for (const auto& in : n.inputs) args.push_back(in.empty() ? nullptr : lookup(g, local, base, in, n));
  return run_node(g, n, args);
}

TensorMap collect_outputs(const ModelGraph& g, const TensorMap& local, const TensorMap* base) {
  TensorMap out;
  for (const auto& spec : g.output_specs) {
    auto it = local.find(spec.name);
    out.emplace(spec.name, it != local.end() ? it->second : base->at(spec.name));
  }
  return out;
}

}  // namespace

TensorMap forward(const ModelGraph& g, const TensorMap& inputs, const ChannelMask& mask) {
  check_inputs(g, inputs);
  TensorMap values = inputs;
  for (const auto& n : g.nodes) {
    TensorF y = compute(g, n, values, nullptr);
    finish(n, y, mask);
    values.insert_or_assign(n.outputs[0], std::move(y));
  }
  return collect_outputs(g, values, nullptr);
}

ForwardCache::ForwardCache(const ModelGraph& g, TensorMap inputs) : g_(&g) {
  batch_ = check_inputs(g, inputs);
  values_ = std::move(inputs);
  for (const auto& n : g.nodes) {
    TensorF y = compute(g, n, values_, nullptr);
    finish(n, y, {});
    values_.insert_or_assign(n.outputs[0], std::move(y));
  }
}

TensorMap ForwardCache::run(const ChannelMask& mask) const {
  const ModelGraph& g = *g_;
  TensorMap local;
  std::set<std::string> dirty;
  for (const auto& n : g.nodes) {
    const bool masked = mask.contains(n.outputs[0]);
    const bool stale = std::any_of(n.inputs.begin(), n.inputs.end(),
                                   [&](const std::string& in) { return dirty.contains(in); });
    if (!stale && !masked) continue;
    TensorF y = stale ? compute(g, n, local, &values_) : values_.at(n.outputs[0]);
    finish(n, y, mask);
    local.insert_or_assign(n.outputs[0], std::move(y));
    dirty.insert(n.outputs[0]);
  }
  return collect_outputs(g, local, &values_);
}

}  // namespace pagcp
