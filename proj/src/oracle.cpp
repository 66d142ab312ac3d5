#include "pagcp/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "pagcp/onnx_io.hpp"

namespace pagcp {

Eigen::MatrixXd per_sample_losses(const TensorMap& outputs, const Batch& batch,
                                  const std::vector<TaskSpec>& tasks) {
  const std::int64_t n = outputs.at(tasks.front().head).dim(0);
  Eigen::MatrixXd losses(n, static_cast<Eigen::Index>(tasks.size()));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const TensorF& out = outputs.at(tasks[t].head);
    const TensorF& y = batch.targets.at(t);
    const std::int64_t width = out.size() / n;
    for (std::int64_t s = 0; s < n; ++s) {
      const float* o = out.raw() + s * width;
      double loss = 0.0;
      switch (tasks[t].loss) {
        case LossKind::cross_entropy: {
          const auto label = static_cast<std::int64_t>(y.raw()[s]);
          if (label < 0 || label >= width) {
            throw Error(ErrorKind::evaluation, "class target out of range for task " + tasks[t].name);
          }
          const double peak = *std::max_element(o, o + width);
          double sum = 0.0;
          for (std::int64_t k = 0; k < width; ++k) sum += std::exp(static_cast<double>(o[k]) - peak);
          loss = peak + std::log(sum) - static_cast<double>(o[label]);
          break;
        }
        case LossKind::mse:
        case LossKind::smooth_l1: {
          const float* target = y.raw() + s * width;
          for (std::int64_t k = 0; k < width; ++k) {
            const double d = static_cast<double>(o[k]) - static_cast<double>(target[k]);
            if (tasks[t].loss == LossKind::mse) {
              loss += d * d;
            } else {
              const double a = std::abs(d);
              loss += a < 1.0 ? 0.5 * d * d : a - 0.5;
            }
          }
          loss /= static_cast<double>(width);
          break;
        }
      }
      losses(s, static_cast<Eigen::Index>(t)) = loss;
    }
  }
  return losses;
}

namespace {

TaskLossVector mean_losses(const std::vector<Eigen::MatrixXd>& parts, const EvalDataset& data,
                           const std::string& tag) {
  TaskLossVector out;
  out.tasks = data.task_names();
  out.batch_id = tag;
  out.values.assign(data.tasks.size(), 0.0);
  std::int64_t count = 0;
  for (const auto& m : parts) {
    for (Eigen::Index s = 0; s < m.rows(); ++s) {
      for (Eigen::Index t = 0; t < m.cols(); ++t) out.values[static_cast<std::size_t>(t)] += m(s, t);
    }
    count += m.rows();
  }
  for (auto& v : out.values) {
    v /= static_cast<double>(count);
    if (!std::isfinite(v)) throw Error(ErrorKind::evaluation, "non-finite task loss");
  }
  return out;
}

}  // namespace

TaskLossVector evaluate_losses(const ModelGraph& g, const EvalDataset& data, const ChannelMask& mask) {
  data.check(g);
  std::vector<Eigen::MatrixXd> parts;
  for (const auto& b : data.batches) parts.push_back(per_sample_losses(forward(g, b.inputs, mask), b, data.tasks));
  return mean_losses(parts, data, "eval");
}

TaskLossVector evaluate_losses(const ModelGraph& g, const EvalDataset& data,
                               const ChannelGroups& groups, const std::set<GroupId>& mask) {
  return evaluate_losses(g, data, mask_for(groups, mask));
}

bool RelativeChange::warned() const {
  return std::find(absolute.begin(), absolute.end(), true) != absolute.end();
}

RelativeChange relative_change(const TaskLossVector& base, const TaskLossVector& now) {
  if (base.size() != now.size() || base.tasks != now.tasks) {
    throw Error(ErrorKind::invalid_argument, "loss vectors have different tasks");
  }
  RelativeChange out;
  for (std::size_t t = 0; t < base.size(); ++t) {
    const bool tiny = base[t] <= kZeroLoss;
    out.delta.push_back(tiny ? now[t] - base[t] : (now[t] - base[t]) / base[t]);
    out.absolute.push_back(tiny);
  }
  return out;
}

std::string_view to_string(DropMetric metric) {
  switch (metric) {
    case DropMetric::linf: return "linf";
    case DropMetric::l1_sum: return "l1_sum";
    case DropMetric::l2: return "l2";
    case DropMetric::min: return "min";
  }
  return "unknown";
}

std::optional<DropMetric> drop_metric_from_name(std::string_view name) {
  for (auto m : {DropMetric::linf, DropMetric::l1_sum, DropMetric::l2, DropMetric::min}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

PerfDrop perf_drop(std::span<const double> delta, DropMetric metric) {
  if (delta.empty()) throw Error(ErrorKind::invalid_argument, "empty loss change vector");
  PerfDrop out;
  double peak = -1.0, low = std::abs(delta[0]), sum = 0.0, squares = 0.0;
  for (std::size_t t = 0; t < delta.size(); ++t) {
    const double a = std::abs(delta[t]);
    if (a > peak) {
      peak = a;
      out.argmax_task = t;
    }
    low = std::min(low, a);
    sum += a;
    squares += a * a;
  }
  switch (metric) {
    case DropMetric::linf: out.value = peak; break;
    case DropMetric::l1_sum: out.value = sum; break;
    case DropMetric::l2: out.value = std::sqrt(squares); break;
    case DropMetric::min: out.value = low; break;
  }
  return out;
}

std::string graph_fingerprint(const ModelGraph& g) { return sha256_hex(export_model(g)); }

BuiltinOracle::BuiltinOracle(EvalDataset data, std::string tag, bool cache)
    : data_(std::move(data)), tag_(std::move(tag)), use_cache_(cache) {}

void BuiltinOracle::prepare(const ModelGraph& g) {
  std::string fp = graph_fingerprint(g);
  if (graph_ && fp == fingerprint_) return;
  data_.check(g);
  caches_.clear();
  graph_ = std::make_unique<ModelGraph>(g);
  fingerprint_ = std::move(fp);
  if (!use_cache_) return;
  for (const auto& b : data_.batches) caches_.emplace_back(*graph_, b.inputs);
}

Eigen::MatrixXd BuiltinOracle::sample_losses(const ModelGraph& g, const ChannelMask& mask) {
  prepare(g);
  ++evaluations_;
  std::vector<Eigen::MatrixXd> parts;
  std::int64_t rows = 0;
  for (std::size_t i = 0; i < data_.batches.size(); ++i) {
    const Batch& b = data_.batches[i];
    TensorMap out = use_cache_ ? caches_[i].run(mask) : forward(*graph_, b.inputs, mask);
    parts.push_back(per_sample_losses(out, b, data_.tasks));
    rows += parts.back().rows();
  }
  Eigen::MatrixXd all(rows, static_cast<Eigen::Index>(data_.tasks.size()));
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    all.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return all;
}

TaskLossVector BuiltinOracle::evaluate(const ModelGraph& g, const ChannelGroups& groups,
                                       const std::set<GroupId>& mask) {
  return mean_losses({sample_losses(g, mask_for(groups, mask))}, data_, tag_);
}

}  // namespace pagcp
