// SPDX-License-Identifier: Apache-2.0
#include "rna/arch/spec.hpp"

#include <charconv>
#include <numeric>
#include <vector>

namespace rna::arch {

const char* to_string(Downsample d) {
  switch (d) {
    case Downsample::kNone:
      return "none";
    case Downsample::kPool:
      return "pool";
    case Downsample::kStride:
      return "stride";
  }
  return "?";
}

const char* to_string(UnitKind k) {
  switch (k) {
    case UnitKind::kTwoStage:
      return "two-stage";
    case UnitKind::kBottleneck:
      return "bottleneck";
    case UnitKind::kLinear:
      return "linear";
  }
  return "?";
}

UnitKind level_kind(std::size_t level) {
  return level >= 5 ? UnitKind::kBottleneck : UnitKind::kTwoStage;
}

std::size_t NetworkSpec::unit_count() const {
  return std::accumulate(units.begin(), units.end(), std::size_t{0});
}

std::size_t NetworkSpec::depth() const {
  std::size_t d = 2;
  for (std::size_t l = 0; l < kLevels; ++l) {
    d += units[l] * (level_kind(l) == UnitKind::kBottleneck ? 3 : 2);
  }
  return d;
}

std::size_t NetworkSpec::downsample_count() const {
  std::size_t n = 0;
  for (auto d : downsample) n += d != Downsample::kNone;
  return n;
}

std::string NetworkSpec::name() const {
  std::string s = std::to_string(input_size);
  for (auto u : units) s += "-" + std::to_string(u);
  return s;
}

std::array<Downsample, kLevels> default_downsampling(std::size_t input_size) {
  std::array<Downsample, kLevels> d{};
  d.fill(Downsample::kNone);
  std::size_t first, last;
  if (input_size >= 160) {
    first = 1, last = 5;
  } else if (input_size >= 84) {
    first = 1, last = 4;
  } else {
    first = 2, last = 4;
  }
  for (std::size_t l = first; l <= last; ++l) d[l] = Downsample::kPool;
  return d;
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::size_t parse_field(std::string_view f, int index) {
  const std::string where = "field " + std::to_string(index);
  if (f.empty()) throw ParseError(where + " is empty", index);
  for (char c : f) {
    if (c < '0' || c > '9') {
      throw ParseError(where + " (\"" + std::string(f) +
                           "\") is not a non-negative integer",
                       index);
    }
  }
  if (f.size() > 1 && f[0] == '0') {
    throw ParseError(where + " (\"" + std::string(f) + "\") has leading zeros",
                     index);
  }
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || ptr != f.data() + f.size()) {
    throw ParseError(where + " is out of range", index);
  }
  return v;
}

}  // namespace

NetworkSpec parse_spec(std::string_view name) {
  const auto fields = split(name, '-');
  if (fields.size() != 1 + kLevels) {
    throw ParseError("expected 8 dash-separated fields, got " +
                         std::to_string(fields.size()),
                     -1);
  }
  NetworkSpec spec;
  spec.input_size = parse_field(fields[0], 0);
  if (spec.input_size == 0) throw ParseError("field 0 (input size) is zero", 0);
  for (std::size_t l = 0; l < kLevels; ++l) {
    spec.units[l] = parse_field(fields[l + 1], static_cast<int>(l + 1));
  }
  spec.downsample = default_downsampling(spec.input_size);
  return spec;
}

std::array<std::size_t, kLevels> parse_widths(std::string_view text) {
  const auto fields = split(text, ',');
  if (fields.size() != kLevels) {
    throw ParseError("expected 7 comma-separated widths, got " +
                         std::to_string(fields.size()),
                     -1);
  }
  std::array<std::size_t, kLevels> w{};
  for (std::size_t l = 0; l < kLevels; ++l) {
    std::string_view f = fields[l];
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
    while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
    w[l] = parse_field(f, static_cast<int>(l));
    if (w[l] == 0) throw ParseError("width " + std::to_string(l) + " is zero", static_cast<int>(l));
  }
  return w;
}

}  // namespace rna::arch
