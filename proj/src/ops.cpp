#include "neuralmrf/ops.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "neuralmrf/error.hpp"

namespace nmrf {

namespace {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

float sample_clamped(std::span<const float> plane, int h, int w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0;
  const double fx = x - x0;
  const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
  const double bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
  return static_cast<float>(top * (1.0 - fy) + bottom * fy);
}

}  // namespace

ConvSpec::ConvSpec(int in, int out)
    : in_channels(in),
      out_channels(out),
      weights(static_cast<std::size_t>(in) * out * kKernel * kKernel, 0.0f),
      bias(static_cast<std::size_t>(out), 0.0f) {}

void im2col(const Tensor& input, int k, int pad, int stride, std::span<float> cols) {
  const int channels = input.channels();
  const int h = input.height();
  const int w = input.width();
  const int out_h = window_count(h, k, pad, stride);
  const int out_w = window_count(w, k, pad, stride);
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  if (cols.size() != static_cast<std::size_t>(channels) * k * k * n) {
    throw ConfigError("im2col: column buffer has the wrong size");
  }
  const int rows = channels * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    float* dst = cols.data() + static_cast<std::size_t>(r) * n;
    const auto src = input.channel(c);
    for (int oy = 0; oy < out_h; ++oy) {
      const int y = oy * stride + ky - pad;
      if (y < 0 || y >= h) {
        std::fill_n(dst + static_cast<std::size_t>(oy) * out_w, out_w, 0.0f);
        continue;
      }
      for (int ox = 0; ox < out_w; ++ox) {
        const int x = ox * stride + kx - pad;
        dst[oy * out_w + ox] = (x >= 0 && x < w) ? src[y * w + x] : 0.0f;
      }
    }
  }
}

void col2im(std::span<const float> cols, int k, int pad, int stride, Tensor& grad) {
  const int channels = grad.channels();
  const int h = grad.height();
  const int w = grad.width();
  const int out_h = window_count(h, k, pad, stride);
  const int out_w = window_count(w, k, pad, stride);
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  if (cols.size() != static_cast<std::size_t>(channels) * k * k * n) {
    throw ConfigError("col2im: column buffer has the wrong size");
  }
  // One channel per task keeps the accumulation order fixed.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) {
    auto dst = grad.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = cols.data() + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y = oy * stride + ky - pad;
          if (y < 0 || y >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x = ox * stride + kx - pad;
            if (x >= 0 && x < w) dst[y * w + x] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c, int m, int n,
          int k, bool accumulate) {
  ConstMap am(a.data(), m, k);
  ConstMap bm(b.data(), k, n);
  Map cm(c.data(), m, n);
  if (accumulate) {
    cm.noalias() += am * bm;
  } else {
    cm.noalias() = am * bm;
  }
}

void gemm_at_b(std::span<const float> a, std::span<const float> b, std::span<float> c, int m,
               int n, int k) {
  ConstMap am(a.data(), k, m);
  ConstMap bm(b.data(), k, n);
  Map cm(c.data(), m, n);
  cm.noalias() = am.transpose() * bm;
}

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec) {
  if (input.channels() != spec.in_channels) {
    throw ConfigError("conv2d_forward: input has " + std::to_string(input.channels()) +
                      " channels, layer expects " + std::to_string(spec.in_channels));
  }
  constexpr int k = ConvSpec::kKernel;
  const int n = input.height() * input.width();
  const int rows = spec.in_channels * k * k;
  std::vector<float> cols(static_cast<std::size_t>(rows) * n);
  im2col(input, k, ConvSpec::kPadding, 1, cols);

  Tensor out(spec.out_channels, input.height(), input.width());
  for (int o = 0; o < spec.out_channels; ++o) std::ranges::fill(out.channel(o), spec.bias[o]);
  gemm(spec.weights, cols, out.data(), spec.out_channels, n, rows, /*accumulate=*/true);
  return out;
}

Tensor conv2d_backward(const Tensor& input, const ConvSpec& spec, const Tensor& grad_output) {
  if (input.channels() != spec.in_channels) {
    throw ConfigError("conv2d_backward: input channel mismatch");
  }
  require_same_shape(grad_output.shape(),
                     Shape{spec.out_channels, input.height(), input.width()},
                     "conv2d_backward grad_output");
  constexpr int k = ConvSpec::kKernel;
  const int n = input.height() * input.width();
  const int rows = spec.in_channels * k * k;
  std::vector<float> dcols(static_cast<std::size_t>(rows) * n);
  gemm_at_b(spec.weights, grad_output.data(), dcols, rows, n, spec.out_channels);
  Tensor grad(input.shape());
  col2im(dcols, k, ConvSpec::kPadding, 1, grad);
  return grad;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  const auto src = input.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? src[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  require_same_shape(input.shape(), grad_output.shape(), "relu_backward");
  Tensor out(input.shape());
  const auto src = input.data();
  const auto g = grad_output.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? g[i] : 0.0f;
  return out;
}

MaxPoolResult maxpool2_forward(const Tensor& input) {
  const int h = input.height();
  const int w = input.width();
  MaxPoolResult res;
  res.input_shape = input.shape();
  res.pad_bottom = h % 2;
  res.pad_right = w % 2;
  const int out_h = (h + 1) / 2;
  const int out_w = (w + 1) / 2;
  res.output = Tensor(input.channels(), out_h, out_w);
  res.output_shape = res.output.shape();
  res.argmax.resize(res.output.size());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < input.channels(); ++c) {
    const auto src = input.channel(c);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        int best = -1;
        float best_v = 0.0f;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            // Edge replication: padded taps read the last row / column.
            const int y = std::min(2 * oy + dy, h - 1);
            const int x = std::min(2 * ox + dx, w - 1);
            const int idx = y * w + x;
            if (best < 0 || src[idx] > best_v) {
              best = idx;
              best_v = src[idx];
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(c) * out_h + oy) * out_w + ox;
        res.output.storage()[o] = best_v;
        res.argmax[o] = static_cast<std::int32_t>(c * input.shape().plane() + best);
      }
    }
  }
  return res;
}

Tensor maxpool2_backward(const MaxPoolResult& pool, const Tensor& grad_output) {
  require_same_shape(grad_output.shape(), pool.output_shape, "maxpool2_backward");
  Tensor grad(pool.input_shape);
  const auto g = grad_output.data();
  auto dst = grad.data();
  // Serial: replicated edges can route two windows to one input cell.
  for (std::size_t o = 0; o < g.size(); ++o) dst[pool.argmax[o]] += g[o];
  return grad;
}

Tensor bilinear_resize(const Tensor& input, int new_height, int new_width) {
  if (new_height < 1 || new_width < 1) {
    throw ConfigError("bilinear_resize: target size must be at least 1x1");
  }
  if (new_height == input.height() && new_width == input.width()) return input;
  const int h = input.height();
  const int w = input.width();
  const double sy = new_height > 1 ? static_cast<double>(h - 1) / (new_height - 1) : 0.0;
  const double sx = new_width > 1 ? static_cast<double>(w - 1) / (new_width - 1) : 0.0;
  Tensor out(input.channels(), new_height, new_width);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < input.channels(); ++c) {
    const auto src = input.channel(c);
    auto dst = out.channel(c);
    for (int y = 0; y < new_height; ++y) {
      for (int x = 0; x < new_width; ++x) {
        dst[y * new_width + x] = sample_clamped(src, h, w, y * sy, x * sx);
      }
    }
  }
  return out;
}

Tensor rotate(const Tensor& input, double radians) {
  if (radians == 0.0) return input;
  const int h = input.height();
  const int w = input.width();
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  const double cs = std::cos(radians);
  const double sn = std::sin(radians);
  Tensor out(input.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < input.channels(); ++c) {
    const auto src = input.channel(c);
    auto dst = out.channel(c);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Inverse map: rotate the destination coordinate back by -radians.
        const double dx = x - cx;
        const double dy = y - cy;
        const double sx = cs * dx - sn * dy + cx;
        const double sy = sn * dx + cs * dy + cy;
        dst[y * w + x] = sample_clamped(src, h, w, sy, sx);
      }
    }
  }
  return out;
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : omp_get_num_procs());
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace nmrf
