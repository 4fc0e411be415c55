#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neuralmrf/tensor.hpp"

namespace nmrf {

/// Same-padded 3x3 stride-1 convolution with fixed weights.
struct ConvSpec {
  static constexpr int kKernel = 3;
  static constexpr int kPadding = 1;

  int in_channels = 0;
  int out_channels = 0;
  /// out-major: [out][in][ky][kx]
  std::vector<float> weights;
  std::vector<float> bias;

  ConvSpec() = default;
  ConvSpec(int in, int out);

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kKernel * kKernel;
  }
  float& weight(int o, int i, int ky, int kx) {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * kKernel + ky) * kKernel + kx];
  }
  float weight(int o, int i, int ky, int kx) const {
    return weights[((static_cast<std::size_t>(o) * in_channels + i) * kKernel + ky) * kKernel + kx];
  }
};

/// Output spatial extent of a k-sized window sweep.
inline int window_count(int extent, int k, int pad, int stride) {
  return (extent + 2 * pad - k) / stride + 1;
}

/// Unrolls every k x k window into a column. The result is a row-major
/// matrix with C*k*k rows (ordered channel, ky, kx) and out_h*out_w columns.
/// Out-of-bounds taps read zero.
void im2col(const Tensor& input, int k, int pad, int stride, std::span<float> cols);

/// Adjoint of im2col: scatters columns back into `grad` (accumulating).
void col2im(std::span<const float> cols, int k, int pad, int stride, Tensor& grad);

/// Row-major C = A(MxK) * B(KxN), or C += when accumulate is set.
void gemm(std::span<const float> a, std::span<const float> b, std::span<float> c,
          int m, int n, int k, bool accumulate = false);
/// Row-major C = A^T * B with A stored as KxM.
void gemm_at_b(std::span<const float> a, std::span<const float> b, std::span<float> c,
               int m, int n, int k);

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec);
/// Gradient w.r.t. the input only; weights never receive gradients.
Tensor conv2d_backward(const Tensor& input, const ConvSpec& spec, const Tensor& grad_output);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

struct MaxPoolResult {
  Tensor output;
  /// Per output cell, the flat index of the chosen input element.
  std::vector<std::int32_t> argmax;
  Shape input_shape;
  Shape output_shape;
  /// Rows / columns added by edge replication to reach even extents.
  int pad_bottom = 0;
  int pad_right = 0;
};

/// 2x2 non-overlapping max pool. Odd extents are edge-replicated to even.
/// Ties go to the first element in row-major window order.
MaxPoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const MaxPoolResult& pool, const Tensor& grad_output);

/// Corner-aligned bilinear interpolation.
Tensor bilinear_resize(const Tensor& input, int new_height, int new_width);

/// Rotation about the image center by `radians` (counter-clockwise) with
/// bilinear sampling and edge-replication fill. Output keeps the input size.
Tensor rotate(const Tensor& input, double radians);

/// Caps the worker count used by the parallel kernels; 0 means all cores.
void set_num_threads(int n);
int num_threads();

}  // namespace nmrf
