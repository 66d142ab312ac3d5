#pragma once

#include <filesystem>
#include <string>

#include "pagcp/graph.hpp"

namespace pagcp::testing {

/// Hand-built graph: input [N, cin, h, w] -> conv chain with BN + relu,
/// flatten, gemm head "out" (excluded as "head").
ModelGraph chain_model(std::uint64_t seed, std::int64_t cin, std::vector<std::int64_t> widths,
                       std::int64_t h = 6, std::int64_t w = 6);

/// Input [N, in] -> gemm + relu chain "fcI" -> gemm "head" with output "out" [N, 3].
ModelGraph dense_model(std::uint64_t seed, std::int64_t in, std::vector<std::int64_t> widths);

/// ‖a − b‖∞ ≤ rel · max(‖b‖∞, tiny)
bool close(const TensorF& a, const TensorF& b, double rel);

/// Random tensor with entries in [-1, 1).
TensorF random_tensor(Shape shape, std::uint64_t seed);

std::filesystem::path fixture_dir();

/// Fresh empty directory under the build tree.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace pagcp::testing
