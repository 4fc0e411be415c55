#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neuralmrf/ops.hpp"
#include "neuralmrf/tensor.hpp"

namespace nmrf {

enum class LayerKind { kConv, kRelu, kPool };

/// One entry of the fixed VGG-19 trunk (conv1_1 .. relu5_1).
struct LayerInfo {
  std::string_view name;
  LayerKind kind;
  /// Output channels at full width.
  int channels;
  /// Index into Network::convs for conv layers, -1 otherwise.
  int conv_index;
  /// Number of 2x2 pools applied up to and including this layer.
  int pools;
};

/// The pseudo-layer naming the preprocessed image.
inline constexpr std::string_view kInputLayer = "input";

/// Architecture table: the single source of truth for topology.
std::span<const LayerInfo> architecture();
/// Conv layer names of the full VGG-19 feature stack, conv1_1 .. conv5_4.
std::span<const std::string_view> vgg19_conv_names();
/// Index into architecture(), or -1 for the input pseudo-layer.
/// Throws ConfigError for unknown names.
int layer_index(std::string_view name);
/// Cumulative pooling stride (pixels per feature cell) at a tap.
int layer_stride(std::string_view name);

/// Per-channel means subtracted before the first conv, in B, G, R order.
inline constexpr std::array<float, 3> kVggMeanBgr{103.939f, 116.779f, 123.68f};

/// Fixed trunk weights. Immutable after construction and shareable.
struct Network {
  /// Channel widths are the full VGG widths divided by this.
  int width_divisor = 1;
  std::vector<ConvSpec> convs;

  int channels_at(std::string_view layer) const;
  /// Spatial shape of a tap for an input of the given size.
  Shape tap_shape(std::string_view layer, int height, int width) const;
};

/// Throws ConfigError if `net` does not match the architecture table.
void validate(const Network& net);

/// Reads the "NMRF" v1 binary weight format. Files may carry the trailing
/// conv5_2 .. conv5_4 layers of a full VGG-19 conversion; those are shape
/// checked and dropped.
Network load_weights(const std::filesystem::path& path);
void save_weights(const Network& net, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_weights(const Network& net);
Network parse_weights(std::span<const std::uint8_t> bytes);

/// Seeded random trunk with widths scaled by 1/2, 1/4 or 1/8 and
/// fan-in scaled weights so activations stay O(1) for [0,255] images.
Network make_test_network(std::uint64_t seed, double width_scale);

/// Converts an RGB [0,255] image into network input (BGR, mean removed).
Tensor preprocess(const Tensor& rgb);
/// Maps a gradient w.r.t. network input back onto RGB pixels.
Tensor preprocess_backward(const Tensor& grad);

/// Result of one tapped forward pass.
struct LayerActivations {
  /// Exactly the requested taps.
  std::map<std::string, Tensor, std::less<>> taps;
  Tensor input;
  /// Per-layer outputs up to the deepest tap; empty when caching was off.
  std::vector<Tensor> outputs;
  std::vector<MaxPoolResult> pools;
  int depth = -1;

  const Tensor& at(std::string_view name) const;
};

LayerActivations forward_tapped(const Network& net, const Tensor& image,
                                std::span<const std::string> taps, bool cache = true);

/// Gradient w.r.t. the RGB image of sum_t <tap_grads[t], tap_t(image)>.
Tensor backward_multi_tap(const Network& net, const LayerActivations& cached,
                          const std::map<std::string, Tensor, std::less<>>& tap_grads);

}  // namespace nmrf
