// SPDX-License-Identifier: Apache-2.0
#include "rna/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rna/parallel.hpp"

namespace rna {

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::shared_ptr<Node> make_node(const char* op, std::vector<Tensor> inputs) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->inputs = std::move(inputs);
  return node;
}

bool recording(std::initializer_list<const Tensor*> ts) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ts) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op,
                  const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

struct ConvGeom {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
  Conv2dParams p;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return ho * wo; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && p.stride == 1 && p.padding == 0;
  }
};

void im2col(const double* x, const ConvGeom& g, double* cols) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.p.stride + ky * g.p.dilation) -
                          static_cast<long>(g.p.padding);
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + iy * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix =
                static_cast<long>(ox * g.p.stride + kx * g.p.dilation) -
                static_cast<long>(g.p.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeom& g, double* x) {
  const std::size_t hw_out = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* xc = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = cols + ((ci * g.kh + ky) * g.kw + kx) * hw_out;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.p.stride + ky * g.p.dilation) -
                          static_cast<long>(g.p.padding);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = xc + iy * g.w;
          const double* src = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix =
                static_cast<long>(ox * g.p.stride + kx * g.p.dilation) -
                static_cast<long>(g.p.padding);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t window_out_extent(std::size_t in, std::size_t kernel,
                              std::size_t stride, std::size_t pad,
                              std::size_t dilation) {
  if (stride < 1 || dilation < 1 || kernel < 1) {
    throw ShapeError("window: kernel, stride and dilation must be >= 1");
  }
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (in + 2 * pad < span) {
    throw ShapeError("window: input extent " + std::to_string(in) +
                     " with padding " + std::to_string(pad) +
                     " is smaller than the dilated kernel span " +
                     std::to_string(span));
  }
  return (in + 2 * pad - span) / stride + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dParams& p,
              const Tensor* bias) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "weight");
  ConvGeom g{};
  g.n = x.dim(0);
  g.c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.o = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.p = p;
  if (w.dim(1) != g.c) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " has " +
                     std::to_string(g.c) + " channels but weight " +
                     shape_str(w.shape()) + " expects " +
                     std::to_string(w.dim(1)));
  }
  if (bias && bias->numel() != g.o) {
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(g.o) +
                     " output channels");
  }
  g.ho = window_out_extent(g.h, g.kh, p.stride, p.padding, p.dilation);
  g.wo = window_out_extent(g.w, g.kw, p.stride, p.padding, p.dilation);

  const std::size_t rows = g.col_rows(), cols_n = g.col_cols();
  std::vector<double> out(g.n * g.o * cols_n);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  ConstMapMat wm(wv, g.o, rows);

  parallel_for(g.n, [&](std::size_t n) {
    const double* xn = xv + n * g.c * g.h * g.w;
    std::vector<double> cols;
    const double* colp = xn;
    if (!g.pointwise()) {
      cols.resize(rows * cols_n);
      im2col(xn, g, cols.data());
      colp = cols.data();
    }
    MapMat om(out.data() + n * g.o * cols_n, g.o, cols_n);
    om.noalias() = wm * ConstMapMat(colp, rows, cols_n);
    if (bias) {
      const auto b = bias->values();
      for (std::size_t o = 0; o < g.o; ++o) om.row(o).array() += b[o];
    }
  });

  std::shared_ptr<Node> node;
  if (recording({&x, &w, bias})) {
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    node = make_node("conv2d", std::move(inputs));
    Tensor xs = x, ws = w;
    const bool has_bias = bias != nullptr;
    node->backward = [g, xs, ws, has_bias](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      const std::size_t rows = g.col_rows(), cols_n = g.col_cols();
      const double* xv = xs.values().data();
      ConstMapMat wm(ws.values().data(), g.o, rows);
      const bool want_x = !gin[0].empty();
      const bool want_w = !gin[1].empty();
      std::vector<double> cols(g.pointwise() ? 0 : rows * cols_n);
      std::vector<double> dcols(rows * cols_n);
      for (std::size_t n = 0; n < g.n; ++n) {
        ConstMapMat gm(gout.data() + n * g.o * cols_n, g.o, cols_n);
        if (want_w) {
          const double* xn = xv + n * g.c * g.h * g.w;
          const double* colp = xn;
          if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            colp = cols.data();
          }
          MapMat dw(gin[1].data(), g.o, rows);
          dw.noalias() += gm * ConstMapMat(colp, rows, cols_n).transpose();
        }
        if (want_x) {
          double* dxn = gin[0].data() + n * g.c * g.h * g.w;
          if (g.pointwise()) {
            MapMat(dxn, rows, cols_n).noalias() += wm.transpose() * gm;
          } else {
            MapMat(dcols.data(), rows, cols_n).noalias() = wm.transpose() * gm;
            col2im(dcols.data(), g, dxn);
          }
        }
        if (has_bias && !gin[2].empty()) {
          for (std::size_t o = 0; o < g.o; ++o) gin[2][o] += gm.row(o).sum();
        }
      }
    };
  }
  return Tensor::make_result({g.n, g.o, g.ho, g.wo}, std::move(out),
                             std::move(node));
}

const char* bn_mode_name(BnMode mode) {
  switch (mode) {
    case BnMode::kTrain:
      return "train";
    case BnMode::kEval:
      return "eval";
    case BnMode::kFrozen:
      return "frozen";
  }
  return "?";
}

void BnState::reset_identity() {
  std::fill(running_mean.begin(), running_mean.end(), 0.0);
  std::fill(running_var.begin(), running_var.end(), 1.0);
  initialized = true;
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BnState& state, BnMode mode) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batchnorm: input must be NC or NCHW, got " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1);
  const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batchnorm: affine parameters must have " +
                     std::to_string(c) + " entries");
  }
  if (state.running_mean.size() != c) {
    throw ShapeError("batchnorm: running statistics sized for " +
                     std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(c));
  }
  const std::size_t m = n * hw;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();

  std::vector<double> mean(c), inv_std(c);
  if (mode == BnMode::kTrain) {
    if (m < 2) {
      throw std::invalid_argument(
          "batchnorm: train mode needs at least 2 values per channel");
    }
    for (std::size_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (std::size_t ni = 0; ni < n; ++ni) {
        const double* p = xv.data() + (ni * c + ci) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t ni = 0; ni < n; ++ni) {
        const double* p = xv.data() + (ni * c + ci) * hw;
        for (std::size_t k = 0; k < hw; ++k) ss += (p[k] - mu) * (p[k] - mu);
      }
      const double var = ss / static_cast<double>(m);
      mean[ci] = mu;
      inv_std[ci] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = ss / static_cast<double>(m - 1);
      if (!state.initialized) {
        state.running_mean[ci] = mu;
        state.running_var[ci] = unbiased;
      } else {
        state.running_mean[ci] = state.momentum * state.running_mean[ci] +
                                 (1.0 - state.momentum) * mu;
        state.running_var[ci] = state.momentum * state.running_var[ci] +
                                (1.0 - state.momentum) * unbiased;
      }
    }
    state.initialized = true;
  } else {
    if (!state.initialized) {
      throw std::logic_error(std::string("batchnorm: ") + bn_mode_name(mode) +
                             " mode requires initialized running statistics");
    }
    for (std::size_t ci = 0; ci < c; ++ci) {
      mean[ci] = state.running_mean[ci];
      inv_std[ci] = 1.0 / std::sqrt(state.running_var[ci] + state.eps);
    }
  }

  std::vector<double> xhat(xv.size()), out(xv.size());
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t base = (ni * c + ci) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const double h = (xv[base + k] - mean[ci]) * inv_std[ci];
        xhat[base + k] = h;
        out[base + k] = gv[ci] * h + bv[ci];
      }
    }
  }

  std::shared_ptr<Node> node;
  if (recording({&x, &gamma, &beta})) {
    node = make_node("batchnorm", {x, gamma, beta});
    const bool batch_stats = mode == BnMode::kTrain;
    Tensor gs = gamma;
    node->backward = [n, c, hw, m, batch_stats, gs, inv_std,
                      xhat = std::move(xhat)](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      const auto gv = gs.values();
      for (std::size_t ci = 0; ci < c; ++ci) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t ni = 0; ni < n; ++ni) {
          const std::size_t base = (ni * c + ci) * hw;
          for (std::size_t k = 0; k < hw; ++k) {
            sum_dy += gout[base + k];
            sum_dy_xhat += gout[base + k] * xhat[base + k];
          }
        }
        if (!gin[1].empty()) gin[1][ci] += sum_dy_xhat;
        if (!gin[2].empty()) gin[2][ci] += sum_dy;
        if (gin[0].empty()) continue;
        const double k_scale = gv[ci] * inv_std[ci];
        const double md = static_cast<double>(m);
        for (std::size_t ni = 0; ni < n; ++ni) {
          const std::size_t base = (ni * c + ci) * hw;
          for (std::size_t k = 0; k < hw; ++k) {
            const double dy = gout[base + k];
            gin[0][base + k] +=
                batch_stats
                    ? k_scale * (dy - sum_dy / md -
                                 xhat[base + k] * sum_dy_xhat / md)
                    : k_scale * dy;
          }
        }
      }
    };
  }
  return Tensor::make_result(x.shape(), std::move(out), std::move(node));
}

Tensor relu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("relu", {x});
    Tensor xs = x;
    node->backward = [xs](const std::vector<double>& gout,
                          std::vector<std::vector<double>>& gin) {
      const auto xv = xs.values();
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > 0.0) gin[0][i] += gout[i];
      }
    };
  }
  return Tensor::make_result(x.shape(), std::move(out), std::move(node));
}

Tensor maxpool(const Tensor& x, const PoolParams& p) {
  require_rank(x, 4, "maxpool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho =
      window_out_extent(h, p.kernel, p.stride, p.padding, p.dilation);
  const std::size_t wo =
      window_out_extent(w, p.kernel, p.stride, p.padding, p.dilation);
  const auto xv = x.values();
  std::vector<double> out(n * c * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t in_base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = SIZE_MAX;
        for (std::size_t ky = 0; ky < p.kernel; ++ky) {
          const long iy = static_cast<long>(oy * p.stride + ky * p.dilation) -
                          static_cast<long>(p.padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < p.kernel; ++kx) {
            const long ix = static_cast<long>(ox * p.stride + kx * p.dilation) -
                            static_cast<long>(p.padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t idx = in_base + iy * w + ix;
            if (best_idx == SIZE_MAX || xv[idx] > best) {
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        if (best_idx == SIZE_MAX) {
          throw ShapeError("maxpool: window lies entirely in padding");
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("maxpool", {x});
    node->backward = [argmax = std::move(argmax)](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      for (std::size_t o = 0; o < gout.size(); ++o) gin[0][argmax[o]] += gout[o];
    };
  }
  return Tensor::make_result({n, c, ho, wo}, std::move(out), std::move(node));
}

Tensor global_avgpool(const Tensor& x) {
  require_rank(x, 4, "global_avgpool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  std::vector<double> out(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double s = 0.0;
    for (std::size_t k = 0; k < hw; ++k) s += xv[plane * hw + k];
    out[plane] = s / static_cast<double>(hw);
  }
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("avgpool-global", {x});
    node->backward = [hw](const std::vector<double>& gout,
                          std::vector<std::vector<double>>& gin) {
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t plane = 0; plane < gout.size(); ++plane) {
        for (std::size_t k = 0; k < hw; ++k) {
          gin[0][plane * hw + k] += gout[plane] * inv;
        }
      }
    };
  }
  return Tensor::make_result({n, c}, std::move(out), std::move(node));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(w, 2, "linear", "weight");
  const std::size_t n = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  }
  if (bias && bias->numel() != out_f) {
    throw ShapeError("linear: bias size mismatch");
  }
  std::vector<double> out(n * out_f);
  MapMat om(out.data(), n, out_f);
  om.noalias() = ConstMapMat(x.values().data(), n, in) *
                 ConstMapMat(w.values().data(), out_f, in).transpose();
  if (bias) {
    const auto b = bias->values();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < out_f; ++j) om(i, j) += b[j];
    }
  }
  std::shared_ptr<Node> node;
  if (recording({&x, &w, bias})) {
    std::vector<Tensor> inputs{x, w};
    if (bias) inputs.push_back(*bias);
    node = make_node("linear", std::move(inputs));
    Tensor xs = x, ws = w;
    const bool has_bias = bias != nullptr;
    node->backward = [n, in, out_f, xs, ws, has_bias](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      ConstMapMat gm(gout.data(), n, out_f);
      if (!gin[0].empty()) {
        MapMat(gin[0].data(), n, in).noalias() +=
            gm * ConstMapMat(ws.values().data(), out_f, in);
      }
      if (!gin[1].empty()) {
        MapMat(gin[1].data(), out_f, in).noalias() +=
            gm.transpose() * ConstMapMat(xs.values().data(), n, in);
      }
      if (has_bias && !gin[2].empty()) {
        for (std::size_t j = 0; j < out_f; ++j) gin[2][j] += gm.col(j).sum();
      }
    };
  }
  return Tensor::make_result({n, out_f}, std::move(out), std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  std::shared_ptr<Node> node;
  if (recording({&a, &b})) {
    node = make_node("add", {a, b});
    node->backward = [](const std::vector<double>& gout,
                        std::vector<std::vector<double>>& gin) {
      for (auto& g : gin) {
        if (g.empty()) continue;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
      }
    };
  }
  return Tensor::make_result(a.shape(), std::move(out), std::move(node));
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& x, double factor) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("scale", {x});
    node->backward = [factor](const std::vector<double>& gout,
                              std::vector<std::vector<double>>& gin) {
      for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * factor;
    };
  }
  return Tensor::make_result(x.shape(), std::move(out), std::move(node));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("sum", {x});
    node->backward = [](const std::vector<double>& gout,
                        std::vector<std::vector<double>>& gin) {
      for (auto& g : gin[0]) g += gout[0];
    };
  }
  return Tensor::make_result({1}, {s}, std::move(node));
}

Tensor gate(const Tensor& x, double grad_factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  std::shared_ptr<Node> node;
  if (grad_factor != 0.0 && recording({&x})) {
    node = make_node("gate", {x});
    node->backward = [grad_factor](const std::vector<double>& gout,
                                   std::vector<std::vector<double>>& gin) {
      for (std::size_t i = 0; i < gout.size(); ++i) {
        gin[0][i] += gout[i] * grad_factor;
      }
    };
  }
  return Tensor::make_result(x.shape(), std::move(out), std::move(node));
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  }
  if (!training || rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const auto xv = x.values();
  std::vector<double> mask(xv.size()), out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    out[i] = xv[i] * mask[i];
  }
  std::shared_ptr<Node> node;
  if (recording({&x})) {
    node = make_node("dropout", {x});
    node->backward = [mask = std::move(mask)](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * mask[i];
    };
  }
  return Tensor::make_result(x.shape(), std::move(out), std::move(node));
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             int ignore_label) {
  if (logits.rank() != 2 && logits.rank() != 4) {
    throw ShapeError("softmax_cross_entropy: logits must be NC or NCHW, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const std::size_t hw =
      logits.rank() == 4 ? logits.dim(2) * logits.dim(3) : 1;
  if (labels.size() != n * hw) {
    throw ShapeError("softmax_cross_entropy: expected " +
                     std::to_string(n * hw) + " labels, got " +
                     std::to_string(labels.size()));
  }
  const auto lv = logits.values();
  std::vector<double> probs(lv.size(), 0.0);
  double loss = 0.0;
  std::size_t valid = 0;
  for (std::size_t ni = 0; ni < n; ++ni) {
    for (std::size_t k = 0; k < hw; ++k) {
      const int label = labels[ni * hw + k];
      if (label == ignore_label) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= c) {
        throw std::out_of_range("softmax_cross_entropy: label " +
                                std::to_string(label) + " outside [0, " +
                                std::to_string(c) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t ci = 0; ci < c; ++ci) {
        mx = std::max(mx, lv[(ni * c + ci) * hw + k]);
      }
      double z = 0.0;
      for (std::size_t ci = 0; ci < c; ++ci) {
        z += std::exp(lv[(ni * c + ci) * hw + k] - mx);
      }
      for (std::size_t ci = 0; ci < c; ++ci) {
        probs[(ni * c + ci) * hw + k] =
            std::exp(lv[(ni * c + ci) * hw + k] - mx) / z;
      }
      loss += std::log(z) + mx - lv[(ni * c + label) * hw + k];
      ++valid;
    }
  }
  const double denom = valid ? static_cast<double>(valid) : 1.0;
  std::shared_ptr<Node> node;
  if (recording({&logits})) {
    node = make_node("softmax-xent", {logits});
    std::vector<int> lab(labels.begin(), labels.end());
    node->backward = [n, c, hw, denom, ignore_label, lab = std::move(lab),
                      probs = std::move(probs)](
                         const std::vector<double>& gout,
                         std::vector<std::vector<double>>& gin) {
      const double s = gout[0] / denom;
      for (std::size_t ni = 0; ni < n; ++ni) {
        for (std::size_t k = 0; k < hw; ++k) {
          const int label = lab[ni * hw + k];
          if (label == ignore_label) continue;
          for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t idx = (ni * c + ci) * hw + k;
            const double onehot = static_cast<int>(ci) == label ? 1.0 : 0.0;
            gin[0][idx] += s * (probs[idx] - onehot);
          }
        }
      }
    };
  }
  return Tensor::make_result({1}, {loss / denom}, std::move(node));
}

}  // namespace rna
