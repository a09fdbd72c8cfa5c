#pragma once

#include <filesystem>
#include <iosfwd>

#include "stf/tensor.hpp"

namespace stf {

/// Text tensor format: one line of space-separated extents, then one
/// row-major value per line at 17 significant digits.
void write_tensor_text(std::ostream& os, const Tensor& t);
void write_tensor_text(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_text(std::istream& is);
Tensor read_tensor_text(const std::filesystem::path& path);

}  // namespace stf
