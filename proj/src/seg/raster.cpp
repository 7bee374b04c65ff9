// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "rna/seg.hpp"

namespace rna::seg {

namespace {

struct Tap {
  std::size_t lo, hi;
  double w_hi;
};

// Half-pixel-centre source taps for one output axis.
std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

std::size_t nearest_src(std::size_t i, std::size_t in, std::size_t out) {
  const auto s = static_cast<std::size_t>(
      std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(in) /
                 static_cast<double>(out)));
  return std::min(s, in - 1);
}

void resize_plane(const double* src, std::size_t iw, double* dst,
                  const std::vector<Tap>& ty, const std::vector<Tap>& tx) {
  for (std::size_t y = 0; y < ty.size(); ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < tx.size(); ++x) {
      const auto& b = tx[x];
      const double top = src[a.lo * iw + b.lo] * (1.0 - b.w_hi) + src[a.lo * iw + b.hi] * b.w_hi;
      const double bot = src[a.hi * iw + b.lo] * (1.0 - b.w_hi) + src[a.hi * iw + b.hi] * b.w_hi;
      dst[y * tx.size() + x] = top * (1.0 - a.w_hi) + bot * a.w_hi;
    }
  }
}

}  // namespace

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || img.height == 0 || img.width == 0) {
    throw std::invalid_argument("resize of an empty raster");
  }
  Image out{img.channels, height, width, std::vector<double>(img.channels * height * width)};
  const auto ty = bilinear_taps(img.height, height);
  const auto tx = bilinear_taps(img.width, width);
  for (std::size_t c = 0; c < img.channels; ++c) {
    resize_plane(img.data.data() + c * img.height * img.width, img.width,
                 out.data.data() + c * height * width, ty, tx);
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& lab, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0 || lab.height == 0 || lab.width == 0) {
    throw std::invalid_argument("resize of an empty raster");
  }
  LabelMap out{height, width, std::vector<std::uint8_t>(height * width)};
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = nearest_src(y, lab.height, height);
    for (std::size_t x = 0; x < width; ++x) {
      out.at(y, x) = lab.at(sy, nearest_src(x, lab.width, width));
    }
  }
  return out;
}

std::pair<Image, LabelMap> augment_with(const Image& img, const LabelMap& lab,
                                        const AugmentParams& p, const AugmentConfig& cfg) {
  if (img.height != lab.height || img.width != lab.width) {
    throw std::invalid_argument("image and label map are not aligned");
  }
  if (!(p.ratio > 0.0)) throw std::invalid_argument("resize ratio must be positive");
  const auto rh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height * p.ratio)));
  const auto rw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width * p.ratio)));
  const Image ri = (rh == img.height && rw == img.width) ? img : resize_bilinear(img, rh, rw);
  const LabelMap rl = (rh == lab.height && rw == lab.width) ? lab : resize_nearest(lab, rh, rw);

  const std::size_t crop = cfg.crop;
  Image oi{img.channels, crop, crop, std::vector<double>(img.channels * crop * crop, cfg.image_fill)};
  LabelMap ol{crop, crop, std::vector<std::uint8_t>(crop * crop, kIgnore)};
  for (std::size_t y = 0; y < crop; ++y) {
    const std::size_t sy = y + p.offset_y;
    if (sy >= rh) break;
    for (std::size_t x = 0; x < crop; ++x) {
      const std::size_t sx = x + p.offset_x;
      if (sx >= rw) break;
      for (std::size_t c = 0; c < img.channels; ++c) oi.at(c, y, x) = ri.at(c, sy, sx);
      ol.at(y, x) = rl.at(sy, sx);
    }
  }
  return {std::move(oi), std::move(ol)};
}

std::pair<Image, LabelMap> augment_sample(const Image& img, const LabelMap& lab, Rng& rng,
                                          const AugmentConfig& cfg, AugmentParams* used) {
  AugmentParams p;
  p.ratio = rng.uniform(cfg.min_ratio, cfg.max_ratio);
  const auto rh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.height * p.ratio)));
  const auto rw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(img.width * p.ratio)));
  p.offset_y = rh > cfg.crop ? rng.below(rh - cfg.crop + 1) : 0;
  p.offset_x = rw > cfg.crop ? rng.below(rw - cfg.crop + 1) : 0;
  if (used) *used = p;
  return augment_with(img, lab, p, cfg);
}

Tensor upsample_bilinear(const Tensor& scores, std::size_t height, std::size_t width) {
  if (scores.rank() != 4) throw ShapeError("upsample_bilinear expects NCHW scores");
  const std::size_t n = scores.dim(0), c = scores.dim(1), ih = scores.dim(2), iw = scores.dim(3);
  std::vector<double> out(n * c * height * width);
  const auto ty = bilinear_taps(ih, height);
  const auto tx = bilinear_taps(iw, width);
  const auto v = scores.values();
  for (std::size_t p = 0; p < n * c; ++p) {
    resize_plane(v.data() + p * ih * iw, iw, out.data() + p * height * width, ty, tx);
  }
  return Tensor::from({n, c, height, width}, std::move(out));
}

std::vector<int> align_labels(const std::vector<LabelMap>& labels, std::size_t height,
                              std::size_t width) {
  std::vector<int> out;
  out.reserve(labels.size() * height * width);
  for (const auto& l : labels) {
    const auto r = resize_nearest(l, height, width);
    for (auto v : r.data) out.push_back(v);
  }
  return out;
}

Tensor images_to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  const auto& f = images.front();
  std::vector<double> data;
  data.reserve(images.size() * f.data.size());
  for (const auto& im : images) {
    if (im.channels != f.channels || im.height != f.height || im.width != f.width) {
      throw ShapeError("images in a batch must share a shape");
    }
    data.insert(data.end(), im.data.begin(), im.data.end());
  }
  return Tensor::from({images.size(), f.channels, f.height, f.width}, std::move(data));
}

std::vector<LabelMap> predict_labels(const Tensor& scores) {
  if (scores.rank() != 4) throw ShapeError("predict_labels expects NCHW scores");
  const std::size_t n = scores.dim(0), c = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  if (c > 255) throw std::invalid_argument("at most 255 classes fit a label map");
  std::vector<LabelMap> out(n, LabelMap{h, w, std::vector<std::uint8_t>(h * w)});
  const auto v = scores.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < h * w; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (v[(i * c + k) * h * w + p] > v[(i * c + best) * h * w + p]) best = k;
      }
      out[i].data[p] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

}  // namespace rna::seg
