#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "neuralmrf/tensor.hpp"

namespace nmrf {

/// Decodes an 8-bit PNG or JPEG (detected by signature) into a 3 x H x W
/// RGB tensor with values in [0, 255]. Grey and alpha inputs are converted.
/// Throws InputError on missing or undecodable files.
Tensor read_image(const std::filesystem::path& path);
Tensor decode_image(std::span<const std::uint8_t> bytes);

/// Writes an 8-bit RGB PNG; values are rounded and clamped to [0, 255].
void write_png(const Tensor& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Tensor& image);

}  // namespace nmrf
