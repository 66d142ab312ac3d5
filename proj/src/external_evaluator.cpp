#include "pagcp/external_evaluator.hpp"

#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "pagcp/onnx_io.hpp"

namespace pagcp {

using nlohmann::json;

json groups_sidecar(const ChannelGroups& groups) {
  json list = json::array();
  for (const auto& g : groups.groups) {
    json points = json::array();
    for (const auto& p : g.mask_points) points.push_back({{"tensor", p.tensor}, {"channel", p.channel}});
    list.push_back({{"id", g.id}, {"layer", g.layer}, {"pinned", g.pinned}, {"mask_points", points}});
  }
  return {{"groups", list}};
}

std::map<GroupId, std::vector<MaskPoint>> parse_groups_sidecar(const json& j) {
  std::map<GroupId, std::vector<MaskPoint>> out;
  try {
    for (const auto& g : j.at("groups")) {
      auto& points = out[g.at("id").get<GroupId>()];
      for (const auto& p : g.at("mask_points")) {
        points.push_back({p.at("tensor").get<std::string>(), p.at("channel").get<std::int64_t>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::protocol, std::string("malformed groups file: ") + e.what());
  }
  return out;
}

ExternalOracle::ExternalOracle(std::vector<std::string> command, std::vector<TaskSpec> tasks,
                               std::filesystem::path workdir, std::string dataset_tag,
                               std::chrono::milliseconds timeout)
    : tasks_(std::move(tasks)), workdir_(std::move(workdir)), tag_(std::move(dataset_tag)), timeout_(timeout) {
  if (tasks_.empty()) throw Error(ErrorKind::config, "external evaluator needs at least one task");
  std::filesystem::create_directories(workdir_);
  proc_ = std::make_unique<Subprocess>(command);

  json specs = json::array();
  for (const auto& t : tasks_) {
    specs.push_back({{"name", t.name}, {"loss", std::string(to_string(t.loss))}, {"head", t.head}});
  }
  proc_->write_line(json{{"type", "hello"}, {"protocol", kProtocolVersion}, {"tasks", specs}}.dump());
  const json ready = receive("ready");
  std::vector<std::string> names;
  try {
    names = ready.at("tasks").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::protocol, "ready message lacks a task list");
  }
  if (names.size() != tasks_.size()) {
    throw Error(ErrorKind::protocol, "evaluator reports " + std::to_string(names.size()) + " tasks, expected " +
                                         std::to_string(tasks_.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != tasks_[i].name) {
      throw Error(ErrorKind::protocol, "evaluator task " + std::to_string(i) + " is '" + names[i] +
                                           "', expected '" + tasks_[i].name + "'");
    }
  }
}

ExternalOracle::~ExternalOracle() {
  try {
    shutdown();
  } catch (...) {
  }
}

std::vector<std::string> ExternalOracle::task_names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks_) out.push_back(t.name);
  return out;
}

json ExternalOracle::receive(const std::string& expected_type) {
  const auto line = proc_->read_line(timeout_);
  if (!line) throw Error(ErrorKind::evaluator_failure, "evaluator exited while a " + expected_type + " was pending");
  json msg;
  try {
    msg = json::parse(*line);
  } catch (const json::exception&) {
    throw Error(ErrorKind::protocol, "evaluator sent a line that is not JSON: " + line->substr(0, 120));
  }
  if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
    throw Error(ErrorKind::protocol, "evaluator message has no type");
  }
  const auto type = msg["type"].get<std::string>();
  if (type == "error") {
    throw Error(ErrorKind::evaluator_failure, "evaluator error: " + msg.value("message", std::string("unspecified")));
  }
  if (type != expected_type) {
    throw Error(ErrorKind::protocol, "expected " + expected_type + ", evaluator sent " + type);
  }
  return msg;
}

TaskLossVector ExternalOracle::evaluate(const ModelGraph& g, const ChannelGroups& groups,
                                        const std::set<GroupId>& mask) {
  if (!proc_) throw Error(ErrorKind::evaluator_failure, "evaluator already shut down");
  const auto fp = graph_fingerprint(g);
  if (fp != fingerprint_) {
    const auto stem = "model_" + fp.substr(0, 16);
    model_path_ = workdir_ / (stem + ".onnx");
    groups_path_ = workdir_ / (stem + ".groups.json");
    save_model_file(g, model_path_);
    std::ofstream(groups_path_) << groups_sidecar(groups).dump() << "\n";
    fingerprint_ = fp;
  }
  const auto id = next_id_++;
  json request{{"type", "eval_request"},
               {"request_id", id},
               {"model", model_path_.string()},
               {"groups", groups_path_.string()},
               {"mask", std::vector<GroupId>(mask.begin(), mask.end())},
               {"dataset", tag_}};
  proc_->write_line(request.dump());
  const json reply = receive("eval_response");
  if (!reply.contains("request_id") || reply["request_id"] != id) {
    throw Error(ErrorKind::protocol, "response does not answer request " + std::to_string(id));
  }
  TaskLossVector out;
  out.batch_id = tag_;
  for (const auto& t : tasks_) {
    const auto& losses = reply.contains("losses") ? reply["losses"] : json();
    if (!losses.is_object() || !losses.contains(t.name) || !losses[t.name].is_number()) {
      throw Error(ErrorKind::protocol, "response lacks a loss for task " + t.name);
    }
    const double v = losses[t.name].get<double>();
    if (!std::isfinite(v)) throw Error(ErrorKind::evaluation, "evaluator returned a non-finite loss for " + t.name);
    out.tasks.push_back(t.name);
    out.values.push_back(v);
  }
  return out;
}

int ExternalOracle::shutdown() {
  if (!proc_) return 0;
  int status = 0;
  try {
    proc_->write_line(json{{"type", "shutdown"}}.dump());
  } catch (const Error& e) {
    spdlog::debug("shutdown not delivered: {}", e.what());
  }
  status = proc_->finish();
  proc_.reset();
  return status;
}

}  // namespace pagcp
