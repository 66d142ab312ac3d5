#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "pagcp/dataset.hpp"
#include "pagcp/pruner.hpp"

namespace pagcp {

struct DatasetSpec {
  enum class Kind { toy, files };
  Kind kind = Kind::files;
  std::filesystem::path dir;        // files
  std::uint64_t seed = 1;           // toy
  std::int64_t samples = 256;       // toy
  std::int64_t batch_size = 64;     // toy
};

struct OracleSpec {
  enum class Kind { builtin, external };
  Kind kind = Kind::builtin;
  std::vector<std::string> command;
  std::int64_t timeout_seconds = 300;
};

/// Everything a subcommand needs, from one JSON file. Relative paths are
/// resolved against the file's directory.
struct RunConfig {
  std::filesystem::path model;
  DatasetSpec dataset;
  std::int64_t probe_samples = 64;  // 0 keeps the whole dataset
  PagcpConfig pagcp;
  std::set<std::string> exclusions;
  OracleSpec oracle;
  std::vector<std::string> finetune_command;  // receives input and output model paths
  std::filesystem::path output_dir = "pagcp_out";
};

/// Sets `dotted.key` in `j` to `value`, parsed as JSON when it parses and
/// kept as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Throws ErrorKind::config on unknown keys, wrong types or bad values.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Canonical form (absolute paths), used for checkpoint compatibility.
nlohmann::json run_config_json(const RunConfig& c);

/// SHA-256 of the canonical form minus the output directory.
std::string config_hash(const RunConfig& c);

/// The evaluation data the config describes, before probe subsetting.
EvalDataset load_config_dataset(const RunConfig& c, const ModelGraph& g);

}  // namespace pagcp
