#include "pagcp/dataset.hpp"

#include <cmath>

#include <algorithm>
#include <numeric>

#include "json.hpp"

#include "pagcp/onnx_io.hpp"
#include "pagcp/random.hpp"

namespace pagcp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::mse: return "mse";
    case LossKind::smooth_l1: return "smooth_l1";
  }
  return "unknown";
}

std::optional<LossKind> loss_kind_from_name(std::string_view name) {
  for (auto k : {LossKind::cross_entropy, LossKind::mse, LossKind::smooth_l1}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::int64_t EvalDataset::samples() const {
  std::int64_t total = 0;
  for (const auto& b : batches) {
    if (!b.inputs.empty()) total += b.inputs.begin()->second.dim(0);
  }
  return total;
}

std::vector<std::string> EvalDataset::task_names() const {
  std::vector<std::string> names;
  for (const auto& t : tasks) names.push_back(t.name);
  return names;
}

void EvalDataset::check(const ModelGraph& g) const {
  if (tasks.empty()) throw Error(ErrorKind::invalid_argument, "dataset declares no tasks");
  if (batches.empty()) throw Error(ErrorKind::invalid_argument, "dataset has no batches");
  for (const auto& t : tasks) {
    if (!g.is_graph_output(t.head)) {
      throw Error(ErrorKind::invalid_argument,
                  "task '" + t.name + "' head '" + t.head + "' is not a graph output");
    }
  }
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const Batch& b = batches[bi];
    if (b.targets.size() != tasks.size()) {
      throw Error(ErrorKind::invalid_argument, "batch " + std::to_string(bi) + " target count mismatch");
    }
    const std::int64_t n = b.inputs.empty() ? 0 : b.inputs.begin()->second.dim(0);
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      const Shape& head = g.shapes.at(tasks[t].head);
      const Shape& y = b.targets[t].shape();
      Shape expected = head;
      expected[0] = n;
      if (tasks[t].loss == LossKind::cross_entropy) expected = {n};
      if (y != expected) {
        throw Error(ErrorKind::invalid_argument, "task '" + tasks[t].name + "' target shape " +
                                                     shape_string(y) + ", expected " +
                                                     shape_string(expected));
      }
    }
  }
}

EvalDataset load_dataset(const fs::path& dir) {
  const fs::path index = dir / "dataset.json";
  json j;
  try {
    j = json::parse(read_file(index));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, index.string() + ": " + e.what());
  }
  EvalDataset data;
  try {
    for (const auto& t : j.at("tasks")) {
      auto kind = loss_kind_from_name(t.at("loss").get<std::string>());
      if (!kind) throw Error(ErrorKind::io, "unknown loss kind " + t.at("loss").dump());
      data.tasks.push_back({t.at("name").get<std::string>(), *kind, t.at("head").get<std::string>()});
    }
    for (const auto& jb : j.at("batches")) {
      Batch b;
      for (const auto& [name, file] : jb.at("inputs").items()) {
        b.inputs[name] = read_tensor_file(dir / file.get<std::string>());
      }
      for (const auto& t : data.tasks) {
        b.targets.push_back(read_tensor_file(dir / jb.at("targets").at(t.name).get<std::string>()));
      }
      data.batches.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, index.string() + ": " + e.what());
  }
  return data;
}

void save_dataset(const EvalDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  json j;
  j["tasks"] = json::array();
  for (const auto& t : data.tasks) {
    j["tasks"].push_back({{"name", t.name}, {"loss", std::string(to_string(t.loss))}, {"head", t.head}});
  }
  j["batches"] = json::array();
  for (std::size_t bi = 0; bi < data.batches.size(); ++bi) {
    const Batch& b = data.batches[bi];
    json jb;
    const std::string prefix = "batch" + std::to_string(bi) + "_";
    for (const auto& [name, t] : b.inputs) {
      write_tensor_file(t, dir / (prefix + name + ".pb"), name);
      jb["inputs"][name] = prefix + name + ".pb";
    }
    for (std::size_t ti = 0; ti < data.tasks.size(); ++ti) {
      const std::string file = prefix + data.tasks[ti].name + ".pb";
      write_tensor_file(b.targets[ti], dir / file, data.tasks[ti].name);
      jb["targets"][data.tasks[ti].name] = file;
    }
    j["batches"].push_back(std::move(jb));
  }
  write_file(dir / "dataset.json", j.dump(2) + "\n");
}

EvalDataset make_toy_dataset(const ModelGraph& g, std::uint64_t seed, std::int64_t samples,
                             std::int64_t batch_size) {
  if (samples <= 0 || batch_size <= 0) throw Error(ErrorKind::invalid_argument, "sample counts must be positive");
  Rng rng(seed);
  EvalDataset data;
  data.tasks = {{"cls", LossKind::cross_entropy, "logits"}, {"reg", LossKind::mse, "regression"}};
  const ValueSpec& spec = g.input_specs.at(0);
  for (std::int64_t start = 0; start < samples; start += batch_size) {
    const std::int64_t n = std::min(batch_size, samples - start);
    Shape shape = g.shapes.at(spec.name);
    shape[0] = n;
    TensorF x(shape);
    if (shape.size() == 4) {
      // per-channel offset plus a random plane wave, so pooled features vary by sample
      const std::int64_t c = shape[1], h = shape[2], w = shape[3];
      for (std::int64_t s = 0; s < n; ++s) {
        const double fy = rng.uniform(0.0, 1.5), fx = rng.uniform(0.0, 1.5), phase = rng.uniform(0.0, 6.2831853);
        for (std::int64_t k = 0; k < c; ++k) {
          const double offset = rng.uniform(-1.0, 1.0), amp = rng.uniform(0.0, 1.0);
          float* plane = x.raw() + (s * c + k) * h * w;
          for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t z = 0; z < w; ++z) {
              const double wave = std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(z) + phase);
              plane[y * w + z] = static_cast<float>(offset + amp * wave + rng.uniform(-0.2, 0.2));
            }
          }
        }
      }
    } else {
      for (std::int64_t i = 0; i < x.size(); ++i) x.raw()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    Batch b;
    b.inputs[spec.name] = x;
    const TensorMap out = forward(g, b.inputs);

    const TensorF& logits = out.at("logits");
    const std::int64_t classes = logits.dim(1);
    TensorF cls({n});
    for (std::int64_t s = 0; s < n; ++s) {
      const float* row = logits.raw() + s * classes;
      std::int64_t label = std::max_element(row, row + classes) - row;
      if (rng.uniform() < 0.1) label = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(classes)));
      cls.raw()[s] = static_cast<float>(label);
    }
    TensorF reg = out.at("regression");
    for (std::int64_t i = 0; i < reg.size(); ++i) reg.raw()[i] += static_cast<float>(rng.uniform(-0.1, 0.1));
    b.targets = {cls, reg};
    data.batches.push_back(std::move(b));
  }
  return data;
}

namespace {

/// Rows `rows` of tensor `t` (sample-major) from the concatenated dataset.
TensorF gather(const std::vector<const TensorF*>& parts, const std::vector<std::int64_t>& rows) {
  Shape shape = parts.front()->shape();
  shape[0] = static_cast<std::int64_t>(rows.size());
  TensorF out(shape);
  const std::int64_t row = numel(shape) / std::max<std::int64_t>(shape[0], 1);
  std::size_t part = 0;
  std::int64_t base = 0;
  float* dst = out.raw();
  for (std::int64_t r : rows) {
    while (r >= base + parts[part]->dim(0)) base += parts[part++]->dim(0);
    std::copy_n(parts[part]->raw() + (r - base) * row, row, dst);
    dst += row;
  }
  return out;
}

}  // namespace

EvalDataset probe_subset(const EvalDataset& data, std::int64_t count, std::uint64_t seed) {
  const std::int64_t total = data.samples();
  std::vector<std::int64_t> rows(static_cast<std::size_t>(total));
  std::iota(rows.begin(), rows.end(), 0);
  if (count > 0 && count < total) {
    Rng rng(seed);
    rng.shuffle(rows);
    rows.resize(static_cast<std::size_t>(count));
    std::sort(rows.begin(), rows.end());
  }
  EvalDataset out;
  out.tasks = data.tasks;
  Batch b;
  for (const auto& [name, _] : data.batches.front().inputs) {
    std::vector<const TensorF*> parts;
    for (const auto& batch : data.batches) parts.push_back(&batch.inputs.at(name));
    b.inputs[name] = gather(parts, rows);
  }
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    std::vector<const TensorF*> parts;
    for (const auto& batch : data.batches) parts.push_back(&batch.targets[t]);
    b.targets.push_back(gather(parts, rows));
  }
  out.batches.push_back(std::move(b));
  return out;
}

}  // namespace pagcp
