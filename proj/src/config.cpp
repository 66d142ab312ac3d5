#include "pagcp/config.hpp"

#include "pagcp/onnx_io.hpp"

namespace pagcp {

using nlohmann::json;

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorKind::config, msg); }

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) bad("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    bad("'" + where + key + "' has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal();
}

}  // namespace

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) bad("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) bad("override key '" + key + "' is malformed");
    if (!node->is_object()) bad("override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base) {
  only_keys(j, "", {"model", "dataset", "probe_samples", "pagcp", "exclusions", "oracle", "finetune", "output_dir"});
  RunConfig c;
  if (!j.contains("model")) bad("missing key 'model'");
  c.model = resolve(base, get<std::string>(j, "model", "", ""));
  if (!std::filesystem::exists(c.model)) bad("model file not found: " + c.model.string());

  const json ds = j.value("dataset", json::object());
  only_keys(ds, "dataset", {"kind", "dir", "seed", "samples", "batch_size"});
  const auto kind = get<std::string>(ds, "kind", "dataset.", "files");
  if (kind == "toy") {
    c.dataset.kind = DatasetSpec::Kind::toy;
    c.dataset.seed = get<std::uint64_t>(ds, "seed", "dataset.", 1);
    c.dataset.samples = get<std::int64_t>(ds, "samples", "dataset.", 256);
    c.dataset.batch_size = get<std::int64_t>(ds, "batch_size", "dataset.", 64);
    if (c.dataset.samples < 1 || c.dataset.batch_size < 1) bad("dataset sizes must be positive");
  } else if (kind == "files") {
    if (!ds.contains("dir")) bad("missing key 'dataset.dir'");
    c.dataset.dir = resolve(base, get<std::string>(ds, "dir", "dataset.", ""));
  } else {
    bad("dataset.kind must be 'toy' or 'files'");
  }
  c.probe_samples = get<std::int64_t>(j, "probe_samples", "", 64);
  if (c.probe_samples < 0) bad("probe_samples must be non-negative");

  const json p = j.value("pagcp", json::object());
  only_keys(p, "pagcp", {"alpha", "d1", "gamma", "P", "probe_ratio", "Gamma", "target_metric", "eta",
                         "drop_metric", "min_channels", "seed", "flops_per_mac", "max_iterations"});
  auto& pc = c.pagcp;
  const std::string w = "pagcp.";
  pc.alpha = get<double>(p, "alpha", w, pc.alpha);
  pc.d1 = get<double>(p, "d1", w, pc.d1);
  pc.gamma = get<double>(p, "gamma", w, pc.gamma);
  pc.P = get<double>(p, "P", w, pc.P);
  pc.probe_ratio = get<double>(p, "probe_ratio", w, pc.probe_ratio);
  pc.Gamma = get<double>(p, "Gamma", w, pc.Gamma);
  const auto tm = target_metric_from_name(get<std::string>(p, "target_metric", w, "flops"));
  if (!tm) bad("pagcp.target_metric must be 'flops' or 'params'");
  pc.target_metric = *tm;
  if (p.contains("eta") && !p.at("eta").is_null()) pc.eta = get<std::int64_t>(p, "eta", w, 0);
  const auto dm = drop_metric_from_name(get<std::string>(p, "drop_metric", w, "linf"));
  if (!dm) bad("pagcp.drop_metric must be one of linf, l1_sum, l2, min");
  pc.drop_metric = *dm;
  pc.min_channels = get<std::int64_t>(p, "min_channels", w, pc.min_channels);
  pc.seed = get<std::uint64_t>(p, "seed", w, pc.seed);
  pc.flops_per_mac = get<std::int64_t>(p, "flops_per_mac", w, pc.flops_per_mac);
  pc.max_iterations = get<std::int64_t>(p, "max_iterations", w, pc.max_iterations);
  pc.check();

  for (const auto& e : get<std::vector<std::string>>(j, "exclusions", "", {})) c.exclusions.insert(e);

  const json o = j.value("oracle", json::object());
  only_keys(o, "oracle", {"kind", "command", "timeout_seconds"});
  const auto ok = get<std::string>(o, "kind", "oracle.", "builtin");
  if (ok == "external") {
    c.oracle.kind = OracleSpec::Kind::external;
    c.oracle.command = get<std::vector<std::string>>(o, "command", "oracle.", {});
    if (c.oracle.command.empty()) bad("oracle.command is required for an external oracle");
  } else if (ok != "builtin") {
    bad("oracle.kind must be 'builtin' or 'external'");
  }
  c.oracle.timeout_seconds = get<std::int64_t>(o, "timeout_seconds", "oracle.", 300);
  if (c.oracle.timeout_seconds < 1) bad("oracle.timeout_seconds must be positive");

  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    only_keys(f, "finetune", {"command"});
    c.finetune_command = get<std::vector<std::string>>(f, "command", "finetune.", {});
  }
  c.output_dir = resolve(base, get<std::string>(j, "output_dir", "", "pagcp_out"));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path)) bad("config file not found: " + path.string());
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) bad("config file is not valid JSON: " + path.string());
  for (const auto& o : overrides) apply_override(j, o);
  return parse_run_config(j, std::filesystem::absolute(path).parent_path());
}

json run_config_json(const RunConfig& c) {
  json j;
  j["model"] = c.model.string();
  if (c.dataset.kind == DatasetSpec::Kind::toy) {
    j["dataset"] = {{"kind", "toy"}, {"seed", c.dataset.seed}, {"samples", c.dataset.samples},
                    {"batch_size", c.dataset.batch_size}};
  } else {
    j["dataset"] = {{"kind", "files"}, {"dir", c.dataset.dir.string()}};
  }
  j["probe_samples"] = c.probe_samples;
  const auto& p = c.pagcp;
  j["pagcp"] = {{"alpha", p.alpha},
                {"d1", p.d1},
                {"gamma", p.gamma},
                {"P", p.P},
                {"probe_ratio", p.probe_ratio},
                {"Gamma", p.Gamma},
                {"target_metric", std::string(to_string(p.target_metric))},
                {"eta", p.eta ? json(*p.eta) : json(nullptr)},
                {"drop_metric", std::string(to_string(p.drop_metric))},
                {"min_channels", p.min_channels},
                {"seed", p.seed},
                {"flops_per_mac", p.flops_per_mac},
                {"max_iterations", p.max_iterations}};
  j["exclusions"] = c.exclusions;
  j["oracle"] = {{"kind", c.oracle.kind == OracleSpec::Kind::builtin ? "builtin" : "external"},
                 {"command", c.oracle.command},
                 {"timeout_seconds", c.oracle.timeout_seconds}};
  j["finetune"] = {{"command", c.finetune_command}};
  j["output_dir"] = c.output_dir.string();
  return j;
}

std::string config_hash(const RunConfig& c) {
  json j = run_config_json(c);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

EvalDataset load_config_dataset(const RunConfig& c, const ModelGraph& g) {
  EvalDataset data = c.dataset.kind == DatasetSpec::Kind::toy
                         ? make_toy_dataset(g, c.dataset.seed, c.dataset.samples, c.dataset.batch_size)
                         : load_dataset(c.dataset.dir);
  data.check(g);
  return data;
}

}  // namespace pagcp
