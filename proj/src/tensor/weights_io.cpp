// SPDX-License-Identifier: Apache-2.0
#include "rna/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

namespace rna {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'W', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError(std::string("RNWT: truncated while reading ") + what);
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(buf[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void write_weights(std::ostream& out, const TensorMap& tensors) {
  if (tensors.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("RNWT: too many tensors");
  }
  out.write(kMagic, 4);
  put_le<std::uint32_t>(out, kWeightsVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("RNWT: tensor name too long: " + name);
    }
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("RNWT: rank too large for " + name);
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) {
      if (e > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError("RNWT: extent too large for " + name);
      }
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
    for (double v : t.values()) {
      put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!out) throw FormatError("RNWT: write failed");
}

TensorMap read_weights(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("RNWT: bad magic");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kWeightsVersion) {
    throw FormatError("RNWT: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in, "tensor count");
  TensorMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get_le<std::uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) {
      throw FormatError("RNWT: truncated name");
    }
    const auto rank = get_le<std::uint8_t>(in, "rank");
    Shape shape(rank);
    for (auto& e : shape) e = get_le<std::uint32_t>(in, "extent");
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
      v = std::bit_cast<double>(get_le<std::uint64_t>(in, "payload"));
    }
    if (!tensors.emplace(name, Tensor::from(shape, std::move(values))).second) {
      throw FormatError("RNWT: duplicate tensor name " + name);
    }
  }
  return tensors;
}

void save_weights(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("RNWT: cannot open " + path.string());
  write_weights(out, tensors);
}

TensorMap load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("RNWT: cannot open " + path.string());
  return read_weights(in);
}

}  // namespace rna
