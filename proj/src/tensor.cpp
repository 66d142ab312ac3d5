#include "pagcp/tensor.hpp"

#include <algorithm>

namespace pagcp {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<std::int64_t> kept_indices(std::int64_t extent,
                                       std::span<const std::int64_t> dropped) {
  std::vector<bool> drop(static_cast<std::size_t>(extent), false);
  for (std::int64_t d : dropped) {
    if (d < 0 || d >= extent) {
      throw Error(ErrorKind::invalid_argument, "dropped index " + std::to_string(d) +
                                                   " outside extent " + std::to_string(extent));
    }
    drop[static_cast<std::size_t>(d)] = true;
  }
  std::vector<std::int64_t> keep;
  keep.reserve(static_cast<std::size_t>(extent));
  for (std::int64_t i = 0; i < extent; ++i) {
    if (!drop[static_cast<std::size_t>(i)]) keep.push_back(i);
  }
  return keep;
}

}  // namespace pagcp
