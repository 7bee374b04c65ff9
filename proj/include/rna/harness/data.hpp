// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rna/seg.hpp"

namespace rna::harness {

struct ClassifyData {
  std::vector<seg::Image> images;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t size() const { return images.size(); }
};

struct SegmentData {
  std::vector<seg::Image> images;
  std::vector<seg::LabelMap> labels;
  std::size_t classes = 0;
  std::size_t size() const { return images.size(); }
};

/// One Gaussian blob on a noisy background per image. The class picks the
/// blob's colour channel (c mod 3) and sign (positive for c < 3): class 0 is
/// a bright red blob, class 1 a bright green one, and so on.
ClassifyData make_blobs(std::size_t count, std::size_t size, std::size_t classes,
                        double noise, std::uint64_t seed);

/// One to three discs per image on class-0 background; each disc carries a
/// class in 1..classes-1 painted with that class's colour.
SegmentData make_seg_blobs(std::size_t count, std::size_t size, std::size_t classes,
                           double noise, std::uint64_t seed);

/// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes (RGB planes,
/// 32x32). Pixels map to (v / 255 - 0.5) / 0.25. `limit` = 0 reads all.
ClassifyData read_cifar10(const std::string& path, std::size_t limit = 0);

/// Raw binary PGM (P5) with one class id per pixel.
void write_pgm(const std::string& path, const seg::LabelMap& map);
seg::LabelMap read_pgm(const std::string& path);

/// Raw binary PPM (P6); values are clamped from [-2, 2] onto 0..255.
void write_ppm(const std::string& path, const seg::Image& img);

/// Visits indices in shuffled epochs; deterministic in the seed.
class BatchSampler {
 public:
  BatchSampler(std::size_t count, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  void reshuffle();
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

}  // namespace rna::harness
