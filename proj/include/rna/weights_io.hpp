// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

#include "rna/tensor.hpp"

namespace rna {

/// Flat weight container ("RNWT"): magic, u32 version, u32 tensor count, then
/// per tensor a u16 name length, UTF-8 name, u8 rank, u32 extents and
/// little-endian f64 payload. Records are written in name order.
inline constexpr std::uint32_t kWeightsVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TensorMap = std::map<std::string, Tensor>;

void write_weights(std::ostream& out, const TensorMap& tensors);
TensorMap read_weights(std::istream& in);

void save_weights(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_weights(const std::filesystem::path& path);

}  // namespace rna
