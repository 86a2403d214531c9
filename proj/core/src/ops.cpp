#include "tmaseg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "tmaseg/error.hpp"

namespace tmaseg::ad {

namespace {

using MatrixR = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatrixR>;
using CMapR = Eigen::Map<const MatrixR>;

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::int64_t n, h, w, c;
  std::int64_t kh, kw, out_c;
  std::int64_t stride, dilation;
  std::int64_t oh, ow;
  std::int64_t pad_top, pad_left;

  std::int64_t rows() const { return n * oh * ow; }
  std::int64_t cols() const { return kh * kw * c; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

std::int64_t same_extent(std::int64_t in, std::int64_t stride) { return (in + stride - 1) / stride; }

ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, const Conv2dOptions& opt) {
  if (kernel.size() != 4) throw Error(ErrorCode::ShapeMismatch, "conv2d kernel must be [kh,kw,cin,cout]");
  if (kernel[2] != in[3]) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d kernel " + shape_string(kernel) + " does not match input " +
                                              shape_string(in));
  }
  if (kernel[0] % 2 == 0 || kernel[1] % 2 == 0) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d kernel spatial dims must be odd, got " + shape_string(kernel));
  }
  if (opt.stride < 1 || opt.dilation < 1) {
    throw Error(ErrorCode::InvalidArgument, "conv2d stride and dilation must be >= 1");
  }
  ConvGeometry g{in[0], in[1], in[2], in[3], kernel[0], kernel[1], kernel[3], opt.stride, opt.dilation, 0, 0, 0, 0};
  const std::int64_t eff_h = opt.dilation * (g.kh - 1) + 1;
  const std::int64_t eff_w = opt.dilation * (g.kw - 1) + 1;
  if (opt.padding == Padding::Same) {
    g.oh = same_extent(g.h, g.stride);
    g.ow = same_extent(g.w, g.stride);
    g.pad_top = std::max<std::int64_t>((g.oh - 1) * g.stride + eff_h - g.h, 0) / 2;
    g.pad_left = std::max<std::int64_t>((g.ow - 1) * g.stride + eff_w - g.w, 0) / 2;
  } else {
    if (g.h < eff_h || g.w < eff_w) {
      throw Error(ErrorCode::ShapeMismatch, "valid conv2d kernel larger than input " + shape_string(in));
    }
    g.oh = (g.h - eff_h) / g.stride + 1;
    g.ow = (g.w - eff_w) / g.stride + 1;
  }
  return g;
}

void im2col(const Real* x, const ConvGeometry& g, Real* col) {
  const std::int64_t cols = g.cols();
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oy = 0; oy < g.oh; ++oy) {
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        Real* dst = col + ((n * g.oh + oy) * g.ow + ox) * cols;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.stride + ky * g.dilation - g.pad_top;
          for (std::int64_t kx = 0; kx < g.kw; ++kx, dst += g.c) {
            const std::int64_t ix = ox * g.stride + kx * g.dilation - g.pad_left;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              std::fill(dst, dst + g.c, Real(0));
            } else {
              const Real* src = x + ((n * g.h + iy) * g.w + ix) * g.c;
              std::copy(src, src + g.c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im(const Real* col, const ConvGeometry& g, Real* x) {
  const std::int64_t cols = g.cols();
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t oy = 0; oy < g.oh; ++oy) {
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        const Real* src = col + ((n * g.oh + oy) * g.ow + ox) * cols;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.stride + ky * g.dilation - g.pad_top;
          for (std::int64_t kx = 0; kx < g.kw; ++kx, src += g.c) {
            const std::int64_t ix = ox * g.stride + kx * g.dilation - g.pad_left;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
            Real* dst = x + ((n * g.h + iy) * g.w + ix) * g.c;
            for (std::int64_t c = 0; c < g.c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

void add_bias_rows(MapR out, const Tensor& bias) {
  out.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.ptr(), bias.size());
}

void accumulate_bias_grad(Tensor* gb, CMapR gout) {
  if (!gb) return;
  // Column sums in row order, accumulated in double for reproducible totals.
  const auto cols = gout.cols();
  std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
  for (Eigen::Index r = 0; r < gout.rows(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) acc[static_cast<std::size_t>(c)] += gout(r, c);
  }
  for (Eigen::Index c = 0; c < cols; ++c) (*gb)[c] += static_cast<Real>(acc[static_cast<std::size_t>(c)]);
}

void check_bias(Var bias, std::int64_t channels, const char* op) {
  if (!bias.valid()) return;
  if (bias.value().rank() != 1 || bias.value().dim(0) != channels) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + " bias " + shape_string(bias.value().shape()) +
                                              " does not match " + std::to_string(channels) + " channels");
  }
}

ReceptiveField conv_rf(ReceptiveField in, std::int64_t k, std::int64_t dilation, std::int64_t stride) {
  return {in.size + static_cast<double>(dilation * (k - 1)) * in.jump, in.jump * static_cast<double>(stride)};
}

}  // namespace

Real sigmoid(Real z) {
  if (z >= Real(0)) return Real(1) / (Real(1) + std::exp(-z));
  const Real e = std::exp(z);
  return e / (Real(1) + e);
}

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

Var conv2d(Var input, Var kernel, Var bias, Conv2dOptions options) {
  Graph& g = *input.graph();
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require_rank(x, 4, "conv2d input");
  const ConvGeometry geo = conv_geometry(x.shape(), w.shape(), options);
  check_bias(bias, geo.out_c, "conv2d");

  Tensor out({geo.n, geo.oh, geo.ow, geo.out_c});
  MapR out_m(out.ptr(), geo.rows(), geo.out_c);
  CMapR w_m(w.ptr(), geo.cols(), geo.out_c);
  if (geo.is_pointwise()) {
    out_m.noalias() = CMapR(x.ptr(), geo.rows(), geo.c) * w_m;
  } else {
    std::vector<Real> col(static_cast<std::size_t>(geo.rows() * geo.cols()));
    im2col(x.ptr(), geo, col.data());
    out_m.noalias() = CMapR(col.data(), geo.rows(), geo.cols()) * w_m;
  }
  if (bias.valid()) add_bias_rows(out_m, bias.value());

  auto backward = [input, kernel, bias, geo](Graph& graph, const Tensor& gout) {
    CMapR gout_m(gout.ptr(), geo.rows(), geo.out_c);
    const Tensor& x = graph.value(input);
    const Tensor& w = graph.value(kernel);
    Tensor* gx = graph.grad_sink(input);
    Tensor* gw = graph.grad_sink(kernel);
    accumulate_bias_grad(graph.grad_sink(bias), gout_m);
    if (geo.is_pointwise()) {
      if (gw) MapR(gw->ptr(), geo.cols(), geo.out_c).noalias() += CMapR(x.ptr(), geo.rows(), geo.c).transpose() * gout_m;
      if (gx) MapR(gx->ptr(), geo.rows(), geo.c).noalias() += gout_m * CMapR(w.ptr(), geo.cols(), geo.out_c).transpose();
      return;
    }
    std::vector<Real> col(static_cast<std::size_t>(geo.rows() * geo.cols()));
    if (gw) {
      im2col(x.ptr(), geo, col.data());
      MapR(gw->ptr(), geo.cols(), geo.out_c).noalias() += CMapR(col.data(), geo.rows(), geo.cols()).transpose() * gout_m;
    }
    if (gx) {
      MapR(col.data(), geo.rows(), geo.cols()).noalias() = gout_m * CMapR(w.ptr(), geo.cols(), geo.out_c).transpose();
      col2im(col.data(), geo, gx->ptr());
    }
  };
  const auto rf = conv_rf(g.receptive_field(input), geo.kh, geo.dilation, geo.stride);
  return g.record(std::move(out), {input, kernel, bias}, std::move(backward), rf);
}

Var transposed_conv2d(Var input, Var kernel, Var bias, int stride) {
  Graph& g = *input.graph();
  const Tensor& x = input.value();
  const Tensor& w = kernel.value();
  require_rank(x, 4, "transposed_conv2d input");
  require_rank(w, 4, "transposed_conv2d kernel");
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "transposed_conv2d stride must be >= 1");
  if (w.dim(0) != x.dim(3) || w.dim(1) != w.dim(2)) {
    throw Error(ErrorCode::ShapeMismatch, "transposed_conv2d kernel " + shape_string(w.shape()) +
                                              " does not match input " + shape_string(x.shape()));
  }
  const std::int64_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::int64_t k = w.dim(1), co = w.dim(3), s = stride;
  const std::int64_t oh = h * s, ow = wd * s;
  const std::int64_t pad = std::max<std::int64_t>(k - s, 0) / 2;
  const std::int64_t rows = n * h * wd, kcols = k * k * co;
  check_bias(bias, co, "transposed_conv2d");

  // Scatter each input pixel's k*k*co contribution block into the output.
  auto for_each_tap = [=](auto&& fn) {
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t iy = 0; iy < h; ++iy)
        for (std::int64_t ix = 0; ix < wd; ++ix) {
          const std::int64_t row = (b * h + iy) * wd + ix;
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const std::int64_t oy = iy * s + ky - pad;
            if (oy < 0 || oy >= oh) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t ox = ix * s + kx - pad;
              if (ox < 0 || ox >= ow) continue;
              fn(row * kcols + (ky * k + kx) * co, ((b * oh + oy) * ow + ox) * co);
            }
          }
        }
  };

  std::vector<Real> cols(static_cast<std::size_t>(rows * kcols));
  MapR(cols.data(), rows, kcols).noalias() = CMapR(x.ptr(), rows, ci) * CMapR(w.ptr(), ci, kcols);
  Tensor out({n, oh, ow, co});
  Real* o = out.ptr();
  for_each_tap([&](std::int64_t src, std::int64_t dst) {
    for (std::int64_t c = 0; c < co; ++c) o[dst + c] += cols[static_cast<std::size_t>(src + c)];
  });
  if (bias.valid()) add_bias_rows(MapR(out.ptr(), n * oh * ow, co), bias.value());

  auto backward = [=](Graph& graph, const Tensor& gout) {
    accumulate_bias_grad(graph.grad_sink(bias), CMapR(gout.ptr(), n * oh * ow, co));
    Tensor* gx = graph.grad_sink(input);
    Tensor* gw = graph.grad_sink(kernel);
    if (!gx && !gw) return;
    std::vector<Real> gcols(static_cast<std::size_t>(rows * kcols), Real(0));
    const Real* go = gout.ptr();
    for_each_tap([&](std::int64_t dst, std::int64_t src) {
      for (std::int64_t c = 0; c < co; ++c) gcols[static_cast<std::size_t>(dst + c)] = go[src + c];
    });
    CMapR gcols_m(gcols.data(), rows, kcols);
    if (gw) MapR(gw->ptr(), ci, kcols).noalias() += CMapR(graph.value(input).ptr(), rows, ci).transpose() * gcols_m;
    if (gx) MapR(gx->ptr(), rows, ci).noalias() += gcols_m * CMapR(graph.value(kernel).ptr(), ci, kcols).transpose();
  };
  const auto in_rf = g.receptive_field(input);
  const ReceptiveField rf{in_rf.size + static_cast<double>((k + s - 1) / s - 1) * in_rf.jump,
                          in_rf.jump / static_cast<double>(s)};
  return g.record(std::move(out), {input, kernel, bias}, std::move(backward), rf);
}

Var relu(Var x) {
  Graph& g = *x.graph();
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, Real(0));
  auto backward = [x](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    if (!gx) return;
    const Tensor& in = graph.value(x);
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      if (in[i] > Real(0)) (*gx)[i] += gout[i];
    }
  };
  return g.record(std::move(out), {x}, std::move(backward), g.receptive_field(x));
}

Var sigmoid(Var x) {
  Graph& g = *x.graph();
  Tensor out = x.value();
  for (auto& v : out.data()) v = sigmoid(v);
  auto backward = [x, out](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < gout.size(); ++i) (*gx)[i] += gout[i] * out[i] * (Real(1) - out[i]);
  };
  Tensor value = out;
  return g.record(std::move(value), {x}, std::move(backward), g.receptive_field(x));
}

Var max_pool2d(Var x, int window) {
  Graph& g = *x.graph();
  const Tensor& in = x.value();
  require_rank(in, 4, "max_pool2d");
  const std::int64_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3), f = window;
  if (f < 1 || h % f != 0 || w % f != 0) {
    throw Error(ErrorCode::ShapeMismatch, "max_pool2d window " + std::to_string(window) +
                                              " does not divide " + shape_string(in.shape()));
  }
  const std::int64_t oh = h / f, ow = w / f;
  Tensor out({n, oh, ow, c});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.size()));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          std::int64_t best = ((b * h + oy * f) * w + ox * f) * c + ch;
          for (std::int64_t dy = 0; dy < f; ++dy)
            for (std::int64_t dx = 0; dx < f; ++dx) {
              const std::int64_t idx = ((b * h + oy * f + dy) * w + ox * f + dx) * c + ch;
              if (in[idx] > in[best]) best = idx;
            }
          const std::int64_t o = ((b * oh + oy) * ow + ox) * c + ch;
          out[o] = in[best];
          argmax[static_cast<std::size_t>(o)] = best;
        }
  auto backward = [x, argmax = std::move(argmax)](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < gout.size(); ++i) (*gx)[argmax[static_cast<std::size_t>(i)]] += gout[i];
  };
  const auto rf = conv_rf(g.receptive_field(x), f, 1, f);
  return g.record(std::move(out), {x}, std::move(backward), rf);
}

Var nearest_upsample(Var x, int factor) {
  Graph& g = *x.graph();
  const Tensor& in = x.value();
  require_rank(in, 4, "nearest_upsample");
  if (factor < 1) throw Error(ErrorCode::InvalidArgument, "upsample factor must be >= 1");
  const std::int64_t n = in.dim(0), h = in.dim(1), w = in.dim(2), c = in.dim(3), f = factor;
  Tensor out({n, h * f, w * f, c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < h * f; ++y)
      for (std::int64_t xx = 0; xx < w * f; ++xx) {
        const Real* src = &in.ptr()[((b * h + y / f) * w + xx / f) * c];
        std::copy(src, src + c, &out.ptr()[((b * h * f + y) * w * f + xx) * c]);
      }
  auto backward = [x, n, h, w, c, f](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    if (!gx) return;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t y = 0; y < h * f; ++y)
        for (std::int64_t xx = 0; xx < w * f; ++xx) {
          const Real* src = &gout.ptr()[((b * h * f + y) * w * f + xx) * c];
          Real* dst = &gx->ptr()[((b * h + y / f) * w + xx / f) * c];
          for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
        }
  };
  auto rf = g.receptive_field(x);
  rf.jump /= static_cast<double>(f);
  return g.record(std::move(out), {x}, std::move(backward), rf);
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorCode::InvalidArgument, "concat_channels needs at least one input");
  Graph& g = *parts[0].graph();
  const Tensor& first = parts[0].value();
  require_rank(first, 4, "concat_channels");
  std::vector<std::int64_t> offsets;
  std::int64_t total = 0;
  ReceptiveField rf = g.receptive_field(parts[0]);
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    require_rank(t, 4, "concat_channels");
    if (t.dim(0) != first.dim(0) || t.dim(1) != first.dim(1) || t.dim(2) != first.dim(2)) {
      throw Error(ErrorCode::ShapeMismatch, "concat_channels spatial mismatch: " + shape_string(first.shape()) +
                                                " vs " + shape_string(t.shape()));
    }
    offsets.push_back(total);
    total += t.dim(3);
    const auto prf = g.receptive_field(p);
    rf.size = std::max(rf.size, prf.size);
    rf.jump = std::min(rf.jump, prf.jump);
  }
  const std::int64_t pixels = first.dim(0) * first.dim(1) * first.dim(2);
  Tensor out({first.dim(0), first.dim(1), first.dim(2), total});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& t = parts[i].value();
    const std::int64_t c = t.dim(3);
    for (std::int64_t p = 0; p < pixels; ++p) {
      std::copy(t.ptr() + p * c, t.ptr() + (p + 1) * c, out.ptr() + p * total + offsets[i]);
    }
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  auto backward = [parents, offsets, pixels, total](Graph& graph, const Tensor& gout) {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      Tensor* gp = graph.grad_sink(parents[i]);
      if (!gp) continue;
      const std::int64_t c = gp->dim(3);
      for (std::int64_t p = 0; p < pixels; ++p) {
        const Real* src = gout.ptr() + p * total + offsets[i];
        Real* dst = gp->ptr() + p * c;
        for (std::int64_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
      }
    }
  };
  return g.record(std::move(out), parents, std::move(backward), rf);
}

Var add(Var a, Var b) {
  Graph& g = *a.graph();
  if (a.value().shape() != b.value().shape()) {
    throw Error(ErrorCode::ShapeMismatch,
                "add: " + shape_string(a.value().shape()) + " vs " + shape_string(b.value().shape()));
  }
  Tensor out = a.value();
  out.add_(b.value());
  auto backward = [a, b](Graph& graph, const Tensor& gout) {
    if (Tensor* ga = graph.grad_sink(a)) ga->add_(gout);
    if (Tensor* gb = graph.grad_sink(b)) gb->add_(gout);
  };
  const auto ra = g.receptive_field(a), rb = g.receptive_field(b);
  return g.record(std::move(out), {a, b}, std::move(backward),
                  {std::max(ra.size, rb.size), std::min(ra.jump, rb.jump)});
}

namespace {

void check_norm_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                       const Tensor& var) {
  require_rank(x, 4, "batch_norm");
  const Shape ch{x.dim(3)};
  if (gamma.shape() != ch || beta.shape() != ch || mean.shape() != ch || var.shape() != ch) {
    throw Error(ErrorCode::ShapeMismatch, "batch_norm parameters do not match " + std::to_string(x.dim(3)) +
                                              " channels");
  }
}

}  // namespace

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& running_mean, const Tensor& running_var,
                    BatchNormOptions options) {
  Graph& g = *x.graph();
  const Tensor& in = x.value();
  check_norm_shapes(in, gamma.value(), beta.value(), running_mean, running_var);
  const std::int64_t c = in.dim(3), pixels = in.size() / c;
  std::vector<Real> scale(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    scale[static_cast<std::size_t>(ch)] =
        static_cast<Real>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + options.eps));
  }
  Tensor xhat(in.shape());
  Tensor out(in.shape());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::int64_t p = 0; p < pixels; ++p)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t i = p * c + ch;
      xhat[i] = (in[i] - running_mean[ch]) * scale[static_cast<std::size_t>(ch)];
      out[i] = gm[ch] * xhat[i] + bt[ch];
    }
  auto backward = [x, gamma, beta, xhat = std::move(xhat), scale, c, pixels](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    Tensor* gg = graph.grad_sink(gamma);
    Tensor* gb = graph.grad_sink(beta);
    const Tensor& gm = graph.value(gamma);
    std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t p = 0; p < pixels; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t i = p * c + ch;
        sum_g[static_cast<std::size_t>(ch)] += gout[i];
        sum_gx[static_cast<std::size_t>(ch)] += static_cast<double>(gout[i]) * xhat[i];
        if (gx) (*gx)[i] += gout[i] * gm[ch] * scale[static_cast<std::size_t>(ch)];
      }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (gg) (*gg)[ch] += static_cast<Real>(sum_gx[static_cast<std::size_t>(ch)]);
      if (gb) (*gb)[ch] += static_cast<Real>(sum_g[static_cast<std::size_t>(ch)]);
    }
  };
  return g.record(std::move(out), {x, gamma, beta}, std::move(backward), g.receptive_field(x));
}

Var batch_norm(Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var, Mode mode,
               BatchNormOptions options) {
  if (mode == Mode::Eval) return batch_norm_eval(x, gamma, beta, running_mean, running_var, options);
  Graph& g = *x.graph();
  const Tensor& in = x.value();
  check_norm_shapes(in, gamma.value(), beta.value(), running_mean, running_var);
  const std::int64_t c = in.dim(3), pixels = in.size() / c;
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0), var(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t p = 0; p < pixels; ++p)
    for (std::int64_t ch = 0; ch < c; ++ch) mean[static_cast<std::size_t>(ch)] += in[p * c + ch];
  for (auto& m : mean) m /= static_cast<double>(pixels);
  for (std::int64_t p = 0; p < pixels; ++p)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double d = in[p * c + ch] - mean[static_cast<std::size_t>(ch)];
      var[static_cast<std::size_t>(ch)] += d * d;
    }
  for (auto& v : var) v /= static_cast<double>(pixels);

  std::vector<Real> inv_std(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    inv_std[k] = static_cast<Real>(1.0 / std::sqrt(var[k] + options.eps));
    const double unbiased = pixels > 1 ? var[k] * static_cast<double>(pixels) / static_cast<double>(pixels - 1) : var[k];
    running_mean[ch] = static_cast<Real>(options.momentum * running_mean[ch] + (1.0 - options.momentum) * mean[k]);
    running_var[ch] = static_cast<Real>(options.momentum * running_var[ch] + (1.0 - options.momentum) * unbiased);
  }

  Tensor xhat(in.shape());
  Tensor out(in.shape());
  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  for (std::int64_t p = 0; p < pixels; ++p)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t i = p * c + ch;
      const auto k = static_cast<std::size_t>(ch);
      xhat[i] = static_cast<Real>((in[i] - mean[k]) * inv_std[k]);
      out[i] = gm[ch] * xhat[i] + bt[ch];
    }

  auto backward = [x, gamma, beta, xhat = std::move(xhat), inv_std, c, pixels](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    Tensor* gg = graph.grad_sink(gamma);
    Tensor* gb = graph.grad_sink(beta);
    const Tensor& gm = graph.value(gamma);
    std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t p = 0; p < pixels; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t i = p * c + ch;
        sum_g[static_cast<std::size_t>(ch)] += gout[i];
        sum_gx[static_cast<std::size_t>(ch)] += static_cast<double>(gout[i]) * xhat[i];
      }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      if (gg) (*gg)[ch] += static_cast<Real>(sum_gx[static_cast<std::size_t>(ch)]);
      if (gb) (*gb)[ch] += static_cast<Real>(sum_g[static_cast<std::size_t>(ch)]);
    }
    if (!gx) return;
    const double m = static_cast<double>(pixels);
    for (std::int64_t p = 0; p < pixels; ++p)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t i = p * c + ch;
        const auto k = static_cast<std::size_t>(ch);
        const double d = (m * gout[i] - sum_g[k] - xhat[i] * sum_gx[k]) / m;
        (*gx)[i] += static_cast<Real>(static_cast<double>(gm[ch]) * inv_std[k] * d);
      }
  };
  return g.record(std::move(out), {x, gamma, beta}, std::move(backward), g.receptive_field(x));
}

Var weighted_sum(Var x, const Tensor& weights) {
  Graph& g = *x.graph();
  if (weights.shape() != x.value().shape()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted_sum weights " + shape_string(weights.shape()) +
                                              " vs input " + shape_string(x.value().shape()));
  }
  double acc = 0.0;
  const Tensor& in = x.value();
  for (std::int64_t i = 0; i < in.size(); ++i) acc += static_cast<double>(in[i]) * weights[i];
  auto backward = [x, weights](Graph& graph, const Tensor& gout) {
    Tensor* gx = graph.grad_sink(x);
    if (!gx) return;
    for (std::int64_t i = 0; i < gx->size(); ++i) (*gx)[i] += gout[0] * weights[i];
  };
  return g.record(Tensor({}, {static_cast<Real>(acc)}), {x}, std::move(backward), g.receptive_field(x));
}

Var bce_loss(Var logits, const Tensor& target, const Tensor& weight) {
  Graph& g = *logits.graph();
  const Tensor& z = logits.value();
  if (target.shape() != z.shape() || weight.shape() != z.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "bce_loss logits " + shape_string(z.shape()) + ", target " +
                                              shape_string(target.shape()) + ", weight " +
                                              shape_string(weight.shape()));
  }
  double total = 0.0, count = 0.0;
  for (std::int64_t i = 0; i < z.size(); ++i) {
    if (weight[i] == Real(0)) continue;
    total += weight[i] * bce_with_logits(z[i], target[i]);
    count += weight[i];
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  auto backward = [logits, target, weight, count](Graph& graph, const Tensor& gout) {
    Tensor* gz = graph.grad_sink(logits);
    if (!gz || count == 0.0) return;
    const Tensor& z = graph.value(logits);
    const double scale = static_cast<double>(gout[0]) / count;
    for (std::int64_t i = 0; i < z.size(); ++i) {
      if (weight[i] == Real(0)) continue;
      (*gz)[i] += static_cast<Real>(scale * weight[i] * (static_cast<double>(sigmoid(z[i])) - target[i]));
    }
  };
  return g.record(Tensor({}, {static_cast<Real>(loss)}), {logits}, std::move(backward),
                  g.receptive_field(logits));
}

}  // namespace tmaseg::ad
