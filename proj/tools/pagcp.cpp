#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pagcp/config.hpp"
#include "pagcp/cost.hpp"
#include "pagcp/external_evaluator.hpp"
#include "pagcp/onnx_io.hpp"
#include "pagcp/pruner.hpp"
#include "pagcp/report.hpp"
#include "pagcp/subprocess.hpp"
#include "pagcp/toy_models.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pagcp;

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pagcp");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("PAGCP_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

ModelGraph load_configured_model(const RunConfig& c) {
  LoadOptions opts;
  opts.exclusions = c.exclusions;
  return load_model_file(c.model, opts);
}

EvalDataset probe_data(const RunConfig& c, const ModelGraph& g) {
  auto data = load_config_dataset(c, g);
  if (c.probe_samples == 0) return data;
  return probe_subset(data, c.probe_samples, c.pagcp.seed);
}

std::unique_ptr<LossOracle> make_oracle(const RunConfig& c, EvalDataset data) {
  if (c.oracle.kind == OracleSpec::Kind::builtin) return std::make_unique<BuiltinOracle>(std::move(data));
  return std::make_unique<ExternalOracle>(c.oracle.command, data.tasks, c.output_dir / "evaluator", "probe",
                                          std::chrono::seconds(c.oracle.timeout_seconds));
}

bool same_structure(const ModelGraph& a, const ModelGraph& b) {
  if (a.nodes.size() != b.nodes.size() || a.weights.size() != b.weights.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    if (a.nodes[i].id != b.nodes[i].id || a.nodes[i].op != b.nodes[i].op) return false;
  }
  for (const auto& [name, w] : a.weights) {
    const auto it = b.weights.find(name);
    if (it == b.weights.end() || it->second.shape() != w.shape()) return false;
  }
  return true;
}

ModelGraph run_finetune(const RunConfig& c, const ModelGraph& g, std::int64_t iteration) {
  const auto dir = c.output_dir / "finetune";
  fs::create_directories(dir);
  const auto in = dir / ("iter_" + std::to_string(iteration) + "_in.onnx");
  const auto out = dir / ("iter_" + std::to_string(iteration) + "_out.onnx");
  save_model_file(g, in);
  auto argv = c.finetune_command;
  argv.push_back(in.string());
  argv.push_back(out.string());
  spdlog::info("fine-tuning iteration {}", iteration);
  Subprocess proc(argv);
  const int status = proc.finish(std::chrono::hours(24 * 7));
  if (status != 0) throw Error(ErrorKind::evaluator_failure, "fine-tune command failed with status " + std::to_string(status));
  LoadOptions opts;
  opts.exclusions = c.exclusions;
  auto tuned = load_model_file(out, opts);
  if (!same_structure(g, tuned)) throw Error(ErrorKind::evaluator_failure, "fine-tune command changed the model structure");
  return tuned;
}

int cmd_analyze(const RunConfig& c) {
  const auto g = load_configured_model(c);
  const auto groups = build_channel_groups(g, c.exclusions);
  for (const auto& w : groups.warnings) spdlog::warn("{}", w);
  const auto cost = count_cost(g, c.pagcp.flops_per_mac);
  std::ostringstream csv;
  csv << "node,flops,params\n";
  for (const auto& n : cost.per_layer) csv << n.node_id << "," << n.flops << "," << n.params << "\n";
  csv << "total," << cost.total_flops << "," << cost.total_params << "\n";
  write_text(c.output_dir / "cost.csv", csv.str());

  json gj = groups_sidecar(groups);
  gj["layers"] = groups.layers();
  gj["warnings"] = groups.warnings;
  gj["unpinned"] = groups.unpinned_count();
  write_text(c.output_dir / "groups.json", gj.dump(2) + "\n");
  write_text(c.output_dir / "saliency.csv", filter_l1_saliency(g, groups).to_csv(groups));

  std::cout << "flops " << cost.total_flops << "\nparams " << cost.total_params << "\ngroups " << groups.groups.size()
            << "\nprunable_groups " << groups.unpinned_count() << "\nlayers " << groups.layers().size() << "\n";
  return 0;
}

int cmd_sequence(const RunConfig& c, const std::vector<double>& ratios) {
  const auto g = load_configured_model(c);
  const auto groups = build_channel_groups(g, c.exclusions);
  const auto text = sequence_matrix(g, groups, ratios, c.pagcp);
  write_text(c.output_dir / "sequence.csv", text);
  std::cout << text;
  return 0;
}

void write_reports(const fs::path& dir, const PruningPlan& plan) {
  write_text(dir / "widths.csv", width_table(plan));
  write_text(dir / "sensitivity.csv", sensitivity_table(plan));
  write_text(dir / "summary.csv", summary_table(plan));
}

int cmd_prune(const RunConfig& c, bool resume, std::optional<std::int64_t> stop_after) {
  const auto g0 = load_configured_model(c);
  auto oracle = make_oracle(c, probe_data(c, g0));
  const auto ckpt = c.output_dir / "checkpoint";
  const auto hash = config_hash(c);

  std::optional<PruningPlan> prior;
  std::optional<ModelGraph> current;
  if (resume) {
    if (!fs::exists(ckpt / "plan.json")) throw Error(ErrorKind::config, "no checkpoint in " + ckpt.string());
    const auto stored = read_file(ckpt / "config.sha256");
    if (stored.substr(0, 64) != hash) throw Error(ErrorKind::config, "checkpoint was written with a different config");
    prior = plan_from_json(json::parse(read_file(ckpt / "plan.json")));
    if (prior->source_hash != graph_fingerprint(g0)) {
      throw Error(ErrorKind::config, "checkpoint belongs to a different model");
    }
    LoadOptions opts;
    opts.exclusions = c.exclusions;
    current = load_model_file(ckpt / "model.onnx", opts);
    spdlog::info("resuming after {} iterations", prior->iterations.size());
  }

  RunHooks hooks;
  hooks.stop_after_iterations = stop_after;
  hooks.on_iteration = [&](const PruningPlan& plan, const ModelGraph& g) {
    save_model_file(g, ckpt / "model.onnx.tmp");
    fs::rename(ckpt / "model.onnx.tmp", ckpt / "model.onnx");
    write_text(ckpt / "plan.json", plan_text(plan));
    write_text(ckpt / "config.sha256", hash + "\n");
  };
  fs::create_directories(ckpt);
  if (!c.finetune_command.empty()) {
    hooks.finetune = [&](const ModelGraph& g, std::int64_t it) { return run_finetune(c, g, it); };
  }

  PruneResult result;
  try {
    result = run_pagcp(g0, *oracle, c.pagcp, c.exclusions, hooks, prior ? &*prior : nullptr,
                       current ? &*current : nullptr);
  } catch (const Error&) {
    spdlog::error("checkpoint: {}", ckpt.string());
    throw;
  }
  save_model_file(result.graph, c.output_dir / "pruned.onnx");
  write_text(c.output_dir / "plan.json", plan_text(result.plan));
  write_reports(c.output_dir, result.plan);
  std::cout << summary_table(result.plan);
  for (const auto& issue : verify_plan(result.plan)) spdlog::error("plan check: {}", issue);
  return 0;
}

int cmd_eval(const RunConfig& c, const std::string& model, const std::vector<int>& mask) {
  RunConfig cc = c;
  if (!model.empty()) cc.model = fs::absolute(model);
  if (!fs::exists(cc.model)) throw Error(ErrorKind::config, "model file not found: " + cc.model.string());
  const auto g = load_configured_model(cc);
  const auto groups = build_channel_groups(g, cc.exclusions);
  auto oracle = make_oracle(cc, load_config_dataset(cc, g));
  std::set<GroupId> ids(mask.begin(), mask.end());
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= groups.groups.size()) {
      throw Error(ErrorKind::config, "no group " + std::to_string(id));
    }
  }
  const auto v = oracle->evaluate(g, groups, ids);
  json out = json::object();
  for (std::size_t t = 0; t < v.size(); ++t) out[v.tasks[t]] = v[t];
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_report(const fs::path& plan_path, fs::path out) {
  if (!fs::exists(plan_path)) throw Error(ErrorKind::config, "plan file not found: " + plan_path.string());
  const auto j = json::parse(read_file(plan_path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorKind::config, "plan is not valid JSON: " + plan_path.string());
  const auto plan = plan_from_json(j);
  if (out.empty()) out = fs::absolute(plan_path).parent_path();
  write_reports(out, plan);
  std::cout << summary_table(plan);
  const auto issues = verify_plan(plan);
  for (const auto& issue : issues) spdlog::error("plan check: {}", issue);
  return issues.empty() ? 0 : 1;
}

int cmd_build_toy(const std::string& arch_name, std::uint64_t seed, const fs::path& out, std::int64_t samples,
                  std::int64_t batch_size, std::uint64_t data_seed) {
  const auto arch = toy_arch_from_name(arch_name);
  if (!arch) throw Error(ErrorKind::config, "unknown toy architecture '" + arch_name + "'");
  const auto g = build_toy_model(seed, *arch);
  fs::create_directories(out);
  const auto bytes = export_model(g);
  write_text(out / "model.onnx", bytes);
  write_text(out / "model.sha256", sha256_hex(bytes) + "  model.onnx\n");
  save_dataset(make_toy_dataset(g, data_seed, samples, batch_size), out / "dataset");
  json cfg;
  cfg["model"] = "model.onnx";
  cfg["dataset"] = {{"kind", "files"}, {"dir", "dataset"}};
  cfg["probe_samples"] = 64;
  cfg["exclusions"] = toy_head_nodes(*arch);
  cfg["pagcp"] = {{"alpha", 6.0}, {"d1", 0.06}, {"gamma", 0.05}, {"P", 0.8}, {"probe_ratio", 0.3}, {"Gamma", 0.6}};
  cfg["oracle"] = {{"kind", "builtin"}};
  cfg["output_dir"] = "out";
  write_text(out / "config.json", cfg.dump(2) + "\n");
  std::cout << sha256_hex(bytes) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Performance-aware channel pruning for multitask models"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--set", overrides, "override a config key, e.g. pagcp.alpha=4");
  };

  auto* analyze = app.add_subcommand("analyze", "cost report, channel groups and saliency");
  add_config(analyze);

  std::vector<double> ratios{0.1, 0.3, 0.5};
  auto* sequence = app.add_subcommand("sequence", "layer order at several probe ratios");
  add_config(sequence);
  sequence->add_option("--ratios", ratios, "probe ratios")->delimiter(',');

  bool resume = false;
  std::optional<std::int64_t> stop_after;
  auto* prune = app.add_subcommand("prune", "run the pruning loop");
  add_config(prune);
  prune->add_flag("--resume", resume, "continue from the checkpoint in the output directory");
  prune->add_option("--stop-after-iterations", stop_after, "stop after this many iterations");

  std::string eval_model;
  std::vector<int> mask;
  auto* eval = app.add_subcommand("eval", "per-task losses of a model");
  add_config(eval);
  eval->add_option("--model", eval_model, "model to evaluate instead of the configured one");
  eval->add_option("--mask", mask, "group ids to mask")->delimiter(',');

  std::string plan_path, report_out;
  auto* report = app.add_subcommand("report", "width and sensitivity tables from a plan");
  report->add_option("--plan", plan_path, "plan.json")->required();
  report->add_option("--out", report_out, "output directory (default: next to the plan)");

  std::string arch = "toy_mt_a", toy_out;
  std::uint64_t toy_seed = 0, data_seed = 1;
  std::int64_t samples = 256, batch_size = 64;
  auto* build = app.add_subcommand("build-toy", "write a toy model, dataset and config");
  build->add_option("--arch", arch, "toy_mt_a or toy_mt_b");
  build->add_option("--seed", toy_seed, "weight seed");
  build->add_option("--out", toy_out, "output directory")->required();
  build->add_option("--samples", samples, "dataset samples");
  build->add_option("--batch-size", batch_size, "dataset batch size");
  build->add_option("--dataset-seed", data_seed, "dataset seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*report) return cmd_report(plan_path, report_out);
    if (*build) return cmd_build_toy(arch, toy_seed, toy_out, samples, batch_size, data_seed);
    const auto cfg = load_run_config(config_path, overrides);
    if (*analyze) return cmd_analyze(cfg);
    if (*sequence) return cmd_sequence(cfg, ratios);
    if (*prune) return cmd_prune(cfg, resume, stop_after);
    if (*eval) return cmd_eval(cfg, eval_model, mask);
  } catch (const Error& e) {
    spdlog::error("{}{}", e.what(), e.node_id().empty() ? "" : " (node " + e.node_id() + ")");
    return e.kind() == ErrorKind::config ? 2 : 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
