// SPDX-License-Identifier: Apache-2.0
#include "rna/harness/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "rna/harness/config.hpp"

namespace rna::harness {

namespace {

seg::Image noise_image(std::size_t size, double noise, Rng& rng) {
  seg::Image img{3, size, size, std::vector<double>(3 * size * size)};
  for (auto& v : img.data) v = noise * rng.normal();
  return img;
}

// Class colour: channel c mod 3, sign + for c < 3, and a dimmer shade for
// every further wrap of six classes.
std::array<double, 3> class_colour(std::size_t c) {
  std::array<double, 3> col{0.0, 0.0, 0.0};
  const double sign = (c / 3) % 2 == 0 ? 1.0 : -1.0;
  col[c % 3] = sign / static_cast<double>(1 + c / 6);
  return col;
}

std::size_t read_header_value(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    return std::stoul(tok);
  }
  throw FormatError("truncated image header");
}

}  // namespace

ClassifyData make_blobs(std::size_t count, std::size_t size, std::size_t classes,
                        double noise, std::uint64_t seed) {
  if (classes < 1) throw ConfigError("blobs need at least one class");
  ClassifyData d;
  d.classes = classes;
  Rng rng(seed);
  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = rng.below(classes);
    auto img = noise_image(size, noise, rng);
    const double cy = rng.uniform(0.25 * s, 0.75 * s);
    const double cx = rng.uniform(0.25 * s, 0.75 * s);
    const double r = rng.uniform(0.12 * s, 0.25 * s);
    const auto col = class_colour(c);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / r;
        const double dx = (static_cast<double>(x) + 0.5 - cx) / r;
        const double g = std::exp(-0.5 * (dx * dx + dy * dy));
        for (std::size_t ch = 0; ch < 3; ++ch) img.at(ch, y, x) += 1.5 * col[ch] * g;
      }
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(static_cast<int>(c));
  }
  return d;
}

SegmentData make_seg_blobs(std::size_t count, std::size_t size, std::size_t classes,
                           double noise, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("segmentation blobs need at least two classes");
  SegmentData d;
  d.classes = classes;
  Rng rng(seed);
  const double s = static_cast<double>(size);
  for (std::size_t i = 0; i < count; ++i) {
    auto img = noise_image(size, noise, rng);
    seg::LabelMap lab{size, size, std::vector<std::uint8_t>(size * size, 0)};
    const std::size_t discs = 1 + rng.below(3);
    for (std::size_t k = 0; k < discs; ++k) {
      const std::size_t c = 1 + rng.below(classes - 1);
      const double cy = rng.uniform(0.0, s), cx = rng.uniform(0.0, s);
      const double r = rng.uniform(0.1 * s, 0.3 * s);
      const auto col = class_colour(c - 1);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          const double dx = static_cast<double>(x) + 0.5 - cx;
          if (dx * dx + dy * dy > r * r) continue;
          lab.at(y, x) = static_cast<std::uint8_t>(c);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            img.at(ch, y, x) = noise * rng.normal() + 1.5 * col[ch];
          }
        }
      }
    }
    d.images.push_back(std::move(img));
    d.labels.push_back(std::move(lab));
  }
  return d;
}

ClassifyData read_cifar10(const std::string& path, std::size_t limit) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open CIFAR-10 file " + path);
  ClassifyData d;
  d.classes = 10;
  std::vector<unsigned char> rec(3073);
  while (limit == 0 || d.size() < limit) {
    f.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    if (f.gcount() == 0) break;
    if (f.gcount() != static_cast<std::streamsize>(rec.size())) {
      throw FormatError("truncated CIFAR-10 record in " + path);
    }
    if (rec[0] > 9) throw FormatError("CIFAR-10 label out of range in " + path);
    seg::Image img{3, 32, 32, std::vector<double>(3072)};
    for (std::size_t i = 0; i < 3072; ++i) img.data[i] = (rec[1 + i] / 255.0 - 0.5) / 0.25;
    d.images.push_back(std::move(img));
    d.labels.push_back(rec[0]);
  }
  if (d.size() == 0) throw FormatError("no CIFAR-10 records in " + path);
  return d;
}

void write_pgm(const std::string& path, const seg::LabelMap& map) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P5\n" << map.width << " " << map.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(map.data.data()),
          static_cast<std::streamsize>(map.data.size()));
}

seg::LabelMap read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw FormatError(path + " is not a binary PGM");
  seg::LabelMap m;
  m.width = read_header_value(f);
  m.height = read_header_value(f);
  if (read_header_value(f) != 255) throw FormatError(path + ": only 8-bit PGM is supported");
  f.get();
  m.data.resize(m.width * m.height);
  f.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.data.size()));
  if (f.gcount() != static_cast<std::streamsize>(m.data.size())) {
    throw FormatError("truncated PGM " + path);
  }
  return m;
}

void write_ppm(const std::string& path, const seg::Image& img) {
  if (img.channels != 3) throw std::invalid_argument("PPM needs three channels");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp((img.at(c, y, x) + 2.0) / 4.0, 0.0, 1.0);
        f.put(static_cast<char>(std::lround(v * 255.0)));
      }
    }
  }
}

BatchSampler::BatchSampler(std::size_t count, std::uint64_t seed)
    : order_(count), rng_(seed) {
  if (count == 0) throw std::invalid_argument("cannot sample from an empty dataset");
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  pos_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

}  // namespace rna::harness
