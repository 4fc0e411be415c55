#include "neuralmrf/vgg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "neuralmrf/error.hpp"

namespace nmrf {

namespace {

using K = LayerKind;

constexpr std::array<LayerInfo, 30> kTrunk{{
    {"conv1_1", K::kConv, 64, 0, 0},    {"relu1_1", K::kRelu, 64, -1, 0},
    {"conv1_2", K::kConv, 64, 1, 0},    {"relu1_2", K::kRelu, 64, -1, 0},
    {"pool1", K::kPool, 64, -1, 1},     {"conv2_1", K::kConv, 128, 2, 1},
    {"relu2_1", K::kRelu, 128, -1, 1},  {"conv2_2", K::kConv, 128, 3, 1},
    {"relu2_2", K::kRelu, 128, -1, 1},  {"pool2", K::kPool, 128, -1, 2},
    {"conv3_1", K::kConv, 256, 4, 2},   {"relu3_1", K::kRelu, 256, -1, 2},
    {"conv3_2", K::kConv, 256, 5, 2},   {"relu3_2", K::kRelu, 256, -1, 2},
    {"conv3_3", K::kConv, 256, 6, 2},   {"relu3_3", K::kRelu, 256, -1, 2},
    {"conv3_4", K::kConv, 256, 7, 2},   {"relu3_4", K::kRelu, 256, -1, 2},
    {"pool3", K::kPool, 256, -1, 3},    {"conv4_1", K::kConv, 512, 8, 3},
    {"relu4_1", K::kRelu, 512, -1, 3},  {"conv4_2", K::kConv, 512, 9, 3},
    {"relu4_2", K::kRelu, 512, -1, 3},  {"conv4_3", K::kConv, 512, 10, 3},
    {"relu4_3", K::kRelu, 512, -1, 3},  {"conv4_4", K::kConv, 512, 11, 3},
    {"relu4_4", K::kRelu, 512, -1, 3},  {"pool4", K::kPool, 512, -1, 4},
    {"conv5_1", K::kConv, 512, 12, 4},  {"relu5_1", K::kRelu, 512, -1, 4},
}};

constexpr std::array<std::string_view, 16> kVgg19Convs{
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4", "conv5_1", "conv5_2", "conv5_3", "conv5_4"};

constexpr int kTrunkConvs = 13;
constexpr std::array<char, 4> kMagic{'N', 'M', 'R', 'F'};
constexpr std::uint32_t kVersion = 1;

// Full-width (out, in) of every VGG-19 conv, trunk first.
std::pair<int, int> full_conv_dims(int conv) {
  static constexpr std::array<std::pair<int, int>, 16> dims{{{64, 3},
                                                             {64, 64},
                                                             {128, 64},
                                                             {128, 128},
                                                             {256, 128},
                                                             {256, 256},
                                                             {256, 256},
                                                             {256, 256},
                                                             {512, 256},
                                                             {512, 512},
                                                             {512, 512},
                                                             {512, 512},
                                                             {512, 512},
                                                             {512, 512},
                                                             {512, 512},
                                                             {512, 512}}};
  return dims[conv];
}

std::pair<int, int> scaled_conv_dims(int conv, int divisor) {
  auto [out, in] = full_conv_dims(conv);
  return {out / divisor, conv == 0 ? in : in / divisor};
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool read(void* dst, std::size_t n) {
    if (bytes_.size() - pos_ < n) return false;
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
    return true;
  }
  bool u32(std::uint32_t& v) {
    std::array<std::uint8_t, 4> b{};
    if (!read(b.data(), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
  }
  bool f32s(std::vector<float>& out, std::size_t n) {
    out.resize(n);
    for (auto& v : out) {
      std::uint32_t bits = 0;
      if (!u32(bits)) return false;
      v = std::bit_cast<float>(bits);
    }
    return true;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::string layer_error(std::string_view layer, const std::string& what) {
  return "weight file layer " + std::string(layer) + ": " + what;
}

}  // namespace

std::span<const LayerInfo> architecture() { return kTrunk; }

std::span<const std::string_view> vgg19_conv_names() { return kVgg19Convs; }

int layer_index(std::string_view name) {
  if (name == kInputLayer) return -1;
  for (std::size_t i = 0; i < kTrunk.size(); ++i) {
    if (kTrunk[i].name == name) return static_cast<int>(i);
  }
  throw ConfigError("unknown layer name '" + std::string(name) + "'");
}

int layer_stride(std::string_view name) {
  const int idx = layer_index(name);
  return idx < 0 ? 1 : 1 << kTrunk[idx].pools;
}

int Network::channels_at(std::string_view layer) const {
  const int idx = layer_index(layer);
  return idx < 0 ? 3 : kTrunk[idx].channels / width_divisor;
}

Shape Network::tap_shape(std::string_view layer, int height, int width) const {
  const int idx = layer_index(layer);
  const int pools = idx < 0 ? 0 : kTrunk[idx].pools;
  for (int i = 0; i < pools; ++i) {
    height = (height + 1) / 2;
    width = (width + 1) / 2;
  }
  return {channels_at(layer), height, width};
}

void validate(const Network& net) {
  if (net.width_divisor < 1 || 64 % net.width_divisor != 0) {
    throw ConfigError("unsupported width divisor " + std::to_string(net.width_divisor));
  }
  if (net.convs.size() != kTrunkConvs) {
    throw ConfigError("network has " + std::to_string(net.convs.size()) +
                      " conv layers, trunk needs " + std::to_string(kTrunkConvs));
  }
  for (int i = 0; i < kTrunkConvs; ++i) {
    const auto [out, in] = scaled_conv_dims(i, net.width_divisor);
    const ConvSpec& c = net.convs[i];
    if (c.out_channels != out || c.in_channels != in || c.weights.size() != c.weight_count() ||
        c.bias.size() != static_cast<std::size_t>(out)) {
      throw ConfigError("layer " + std::string(kVgg19Convs[i]) + " does not match the trunk shape");
    }
  }
}

std::vector<std::uint8_t> serialize_weights(const Network& net) {
  validate(net);
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_u32(out, kVersion);
  put_u32(out, kTrunkConvs);
  for (int i = 0; i < kTrunkConvs; ++i) {
    const ConvSpec& c = net.convs[i];
    const auto name = kVgg19Convs[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, c.out_channels);
    put_u32(out, c.in_channels);
    put_u32(out, ConvSpec::kKernel);
    put_u32(out, ConvSpec::kKernel);
    for (float w : c.weights) put_u32(out, std::bit_cast<std::uint32_t>(w));
    for (float b : c.bias) put_u32(out, std::bit_cast<std::uint32_t>(b));
  }
  return out;
}

void save_weights(const Network& net, const std::filesystem::path& path) {
  const auto bytes = serialize_weights(net);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw LoadError("failed writing " + path.string());
}

Network parse_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  std::array<char, 4> magic{};
  if (!r.read(magic.data(), 4) || magic != kMagic) throw LoadError("bad magic, not an NMRF file");
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  if (!r.u32(version)) throw LoadError("truncated header");
  if (version != kVersion) throw LoadError("unsupported version " + std::to_string(version));
  if (!r.u32(count)) throw LoadError("truncated header");
  if (count < kTrunkConvs || count > kVgg19Convs.size()) {
    throw LoadError("layer count " + std::to_string(count) + " outside [13, 16]");
  }

  Network net;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string_view expected = kVgg19Convs[i];
    std::uint32_t name_len = 0;
    if (!r.u32(name_len) || name_len > 256) {
      throw LoadError(layer_error(expected, "truncated or corrupt name"));
    }
    std::string name(name_len, '\0');
    if (!r.read(name.data(), name_len)) throw LoadError(layer_error(expected, "truncated name"));
    if (name != expected) {
      throw LoadError(layer_error(expected, "found '" + name + "' where this layer was expected"));
    }
    std::array<std::uint32_t, 4> dims{};
    for (auto& d : dims) {
      if (!r.u32(d)) throw LoadError(layer_error(name, "truncated shape"));
    }
    if (i == 0) {
      if (dims[0] == 0 || 64 % dims[0] != 0) {
        throw LoadError(layer_error(name, "unsupported output width " + std::to_string(dims[0])));
      }
      net.width_divisor = static_cast<int>(64 / dims[0]);
    }
    const auto [out, in] = scaled_conv_dims(static_cast<int>(i), net.width_divisor);
    if (dims[0] != static_cast<std::uint32_t>(out) || dims[1] != static_cast<std::uint32_t>(in) ||
        dims[2] != ConvSpec::kKernel || dims[3] != ConvSpec::kKernel) {
      throw LoadError(layer_error(name, "shape " + std::to_string(dims[0]) + "x" +
                                            std::to_string(dims[1]) + "x" +
                                            std::to_string(dims[2]) + "x" +
                                            std::to_string(dims[3]) + ", expected " +
                                            std::to_string(out) + "x" + std::to_string(in) +
                                            "x3x3"));
    }
    ConvSpec spec(in, out);
    if (!r.f32s(spec.weights, spec.weight_count())) {
      throw LoadError(layer_error(name, "truncated weights"));
    }
    if (!r.f32s(spec.bias, static_cast<std::size_t>(out))) {
      throw LoadError(layer_error(name, "truncated bias"));
    }
    const auto finite = [](float v) { return std::isfinite(v); };
    if (!std::ranges::all_of(spec.weights, finite) || !std::ranges::all_of(spec.bias, finite)) {
      throw LoadError(layer_error(name, "non-finite parameter"));
    }
    if (i < kTrunkConvs) net.convs.push_back(std::move(spec));
  }
  if (r.remaining() != 0) {
    throw LoadError(std::to_string(r.remaining()) + " trailing bytes after the last layer");
  }
  validate(net);
  return net;
}

Network load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open weight file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_weights(bytes);
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

Network make_test_network(std::uint64_t seed, double width_scale) {
  int divisor = 0;
  if (width_scale == 0.5) divisor = 2;
  else if (width_scale == 0.25) divisor = 4;
  else if (width_scale == 0.125) divisor = 8;
  else throw ConfigError("test network width scale must be 1/2, 1/4 or 1/8");

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Network net;
  net.width_divisor = divisor;
  for (int i = 0; i < kTrunkConvs; ++i) {
    const auto [out, in] = scaled_conv_dims(i, divisor);
    ConvSpec spec(in, out);
    // He scaling; the first layer also divides by the pixel spread (~64).
    float std_dev = std::sqrt(2.0f / static_cast<float>(in * 9));
    if (i == 0) std_dev /= 64.0f;
    for (float& w : spec.weights) w = normal(rng) * std_dev;
    for (float& b : spec.bias) b = normal(rng) * 0.01f;
    net.convs.push_back(std::move(spec));
  }
  return net;
}

Tensor preprocess(const Tensor& rgb) {
  if (rgb.channels() != 3) {
    throw ConfigError("network input must have 3 channels, got " + std::to_string(rgb.channels()));
  }
  Tensor out(rgb.shape());
  for (int c = 0; c < 3; ++c) {
    const auto src = rgb.channel(2 - c);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] - kVggMeanBgr[c];
  }
  return out;
}

Tensor preprocess_backward(const Tensor& grad) {
  Tensor out(grad.shape());
  for (int c = 0; c < 3; ++c) std::ranges::copy(grad.channel(2 - c), out.channel(c).begin());
  return out;
}

const Tensor& LayerActivations::at(std::string_view name) const {
  const auto it = taps.find(name);
  if (it == taps.end()) throw ConfigError("layer '" + std::string(name) + "' was not tapped");
  return it->second;
}

LayerActivations forward_tapped(const Network& net, const Tensor& image,
                                std::span<const std::string> taps, bool cache) {
  LayerActivations act;
  for (const auto& t : taps) act.depth = std::max(act.depth, layer_index(t));
  act.input = preprocess(image);
  for (const auto& t : taps) {
    if (t == kInputLayer) act.taps.emplace(t, act.input);
  }

  const Tensor* current = &act.input;
  Tensor scratch;
  if (cache) act.outputs.reserve(act.depth + 1);
  for (int i = 0; i <= act.depth; ++i) {
    const LayerInfo& info = kTrunk[i];
    Tensor out;
    switch (info.kind) {
      case LayerKind::kConv:
        out = conv2d_forward(*current, net.convs[info.conv_index]);
        break;
      case LayerKind::kRelu:
        out = relu_forward(*current);
        break;
      case LayerKind::kPool: {
        MaxPoolResult pooled = maxpool2_forward(*current);
        out = std::move(pooled.output);
        if (cache) {
          pooled.output = Tensor();
          act.pools.push_back(std::move(pooled));
        }
        break;
      }
    }
    if (std::ranges::find(taps, info.name) != taps.end()) act.taps.emplace(info.name, out);
    if (cache) {
      act.outputs.push_back(std::move(out));
      current = &act.outputs.back();
    } else {
      scratch = std::move(out);
      current = &scratch;
    }
  }
  return act;
}

Tensor backward_multi_tap(const Network& net, const LayerActivations& cached,
                          const std::map<std::string, Tensor, std::less<>>& tap_grads) {
  int depth = -1;
  for (const auto& [name, g] : tap_grads) {
    const Shape expected = cached.at(name).shape();
    require_same_shape(g.shape(), expected, ("tap gradient for " + name).c_str());
    depth = std::max(depth, layer_index(name));
  }
  if (depth >= 0 && static_cast<int>(cached.outputs.size()) <= depth) {
    throw ConfigError("backward_multi_tap needs a forward pass run with caching");
  }

  Tensor grad;
  int pool_slot = 0;
  for (int i = 0; i <= depth; ++i) pool_slot += kTrunk[i].kind == LayerKind::kPool;
  for (int i = depth; i >= 0; --i) {
    const LayerInfo& info = kTrunk[i];
    if (grad.empty()) grad = Tensor(cached.outputs[i].shape());
    if (auto it = tap_grads.find(info.name); it != tap_grads.end()) grad += it->second;
    const Tensor& input = i == 0 ? cached.input : cached.outputs[i - 1];
    switch (info.kind) {
      case LayerKind::kConv:
        grad = conv2d_backward(input, net.convs[info.conv_index], grad);
        break;
      case LayerKind::kRelu:
        grad = relu_backward(input, grad);
        break;
      case LayerKind::kPool:
        grad = maxpool2_backward(cached.pools[--pool_slot], grad);
        break;
    }
  }
  if (grad.empty()) grad = Tensor(cached.input.shape());
  if (auto it = tap_grads.find(kInputLayer); it != tap_grads.end()) grad += it->second;
  return preprocess_backward(grad);
}

}  // namespace nmrf
