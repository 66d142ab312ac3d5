#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "pagcp/dataset.hpp"
#include "pagcp/oracle.hpp"
#include "pagcp/subprocess.hpp"

namespace pagcp {

inline constexpr int kProtocolVersion = 1;

/// Group table written next to every model the evaluator is asked about:
/// for each group its id, layer, pinned flag and the (tensor, channel)
/// positions to zero when the group is masked.
nlohmann::json groups_sidecar(const ChannelGroups& groups);

/// Parses a sidecar back into mask points per group id.
std::map<GroupId, std::vector<MaskPoint>> parse_groups_sidecar(const nlohmann::json& j);

/// Loss oracle backed by a separate process speaking line-delimited JSON on
/// its standard streams:
///
///   -> {"type":"hello","protocol":1,"tasks":[{"name","loss","head"}...]}
///   <- {"type":"ready","tasks":[names...]}
///   -> {"type":"eval_request","request_id":n,"model":path,"groups":path,
///       "mask":[sorted group ids],"dataset":tag}
///   <- {"type":"eval_response","request_id":n,"losses":{task: value}}
///      or {"type":"error","request_id":n,"message":...}
///   -> {"type":"shutdown"}
///
/// One request is outstanding at a time. Models are written to `workdir`
/// named by their fingerprint.
class ExternalOracle : public LossOracle {
 public:
  ExternalOracle(std::vector<std::string> command, std::vector<TaskSpec> tasks,
                 std::filesystem::path workdir, std::string dataset_tag = "probe",
                 std::chrono::milliseconds timeout = std::chrono::seconds(300));
  ~ExternalOracle() override;

  std::vector<std::string> task_names() const override;
  TaskLossVector evaluate(const ModelGraph& g, const ChannelGroups& groups,
                          const std::set<GroupId>& mask) override;

  /// Sends shutdown and waits for the process to exit; returns its status.
  int shutdown();

  std::int64_t requests() const noexcept { return next_id_; }

 private:
  nlohmann::json receive(const std::string& expected_type);

  std::vector<TaskSpec> tasks_;
  std::filesystem::path workdir_;
  std::string tag_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<Subprocess> proc_;
  std::string fingerprint_;
  std::filesystem::path model_path_;
  std::filesystem::path groups_path_;
  std::int64_t next_id_ = 0;
};

}  // namespace pagcp
