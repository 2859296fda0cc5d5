#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "tbps/tensor.hpp"

// RTF1 tensor files: an ASCII header line "RTF1 <ndim> <dim0> ... \n" followed
// by little-endian float32 values in row-major order.
namespace tbps::rtf {

void write(std::ostream& os, const Tensor<float>& t);
Tensor<float> read(std::istream& is, const std::string& source = "<stream>");

void save(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load(const std::filesystem::path& path);

}  // namespace tbps::rtf
