#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "pagcp/graph.hpp"

namespace pagcp {

/// Parses an ONNX ModelProto and returns a validated graph with inferred
/// shapes. Unsupported ops are rejected unless their node id is listed in
/// `options.exclusions`, in which case they become opaque nodes.
ModelGraph load_model(std::string_view bytes, const LoadOptions& options = {});
ModelGraph load_model_file(const std::filesystem::path& path, const LoadOptions& options = {});

/// Deterministic ONNX encoding: identical graphs give identical bytes.
std::string export_model(const ModelGraph& g);
void save_model_file(const ModelGraph& g, const std::filesystem::path& path);

/// Lowercase hex SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// Standalone TensorProto encoding, used for dataset and golden files.
TensorF parse_tensor_proto(std::string_view bytes, std::string* name = nullptr);
std::string serialize_tensor_proto(const TensorF& t, const std::string& name = {});
TensorF read_tensor_file(const std::filesystem::path& path);
void write_tensor_file(const TensorF& t, const std::filesystem::path& path,
                       const std::string& name = {});

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace pagcp
