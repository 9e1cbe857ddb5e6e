#pragma once

// Binary checkpoint format (all integers little-endian u32):
//   "ULNF" | version = 1 | tensor count
//   per tensor: name length | UTF-8 name | rank | dims[rank] | row-major f32 payload
// Tensors are written in name order; reading reproduces every bit.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "ulab/model.hpp"

namespace ulab {

void write_tensors(std::ostream& out, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> read_tensors(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ulab
