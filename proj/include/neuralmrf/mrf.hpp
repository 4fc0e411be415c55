#pragma once

#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "neuralmrf/tensor.hpp"
#include "neuralmrf/vgg.hpp"

namespace nmrf {

/// Where a patch was cut: augmented copy id and top-left feature cell.
struct PatchOrigin {
  int copy = 0;
  int y = 0;
  int x = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

/// Feature-space extent of one augmented style copy.
struct BankCopy {
  double scale = 1.0;
  double rotation = 0.0;
  Shape feature;
};

/// Flattened k x k x C neural patches with precomputed magnitudes.
/// Patch layout is (channel, dy, dx); patches are stored row-major.
struct PatchBank {
  int k = 0;
  int channels = 0;
  int stride = 1;
  std::string layer;
  std::vector<float> patches;
  std::vector<float> norms;
  std::vector<PatchOrigin> origins;
  std::vector<BankCopy> copies;

  std::size_t count() const { return norms.size(); }
  int dim() const { return channels * k * k; }
  std::span<const float> patch(std::size_t i) const {
    return std::span<const float>(patches).subspan(i * dim(), dim());
  }
};

struct AugmentationSet {
  std::vector<double> scales{0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15};
  std::vector<double> rotations{-std::numbers::pi / 12, -std::numbers::pi / 24, 0.0,
                                std::numbers::pi / 24, std::numbers::pi / 12};
  bool enable_rotations = false;

  /// A single unscaled, unrotated copy.
  static AugmentationSet identity() { return {{1.0}, {0.0}, false}; }
};

/// Every valid k x k window in row-major scan order (no padding).
PatchBank extract_patches(const Tensor& feature, int k, int stride = 1, int copy = 0);

/// Concatenates `src` onto `dst`; k and channel count must agree.
void append_bank(PatchBank& dst, const PatchBank& src);

/// Patches of `layer` taken from scaled (and optionally rotated) copies of
/// the style image. Copies whose feature map is smaller than k are skipped.
PatchBank build_style_bank(const Network& net, const Tensor& style_image, const std::string& layer,
                           int k, const AugmentationSet& aug, int stride = 1);

struct MatchResult {
  std::vector<int> index;
  /// Normalized cross-correlation of each query with its match.
  std::vector<float> ncc;
};

/// Nearest style patch per query under normalized cross-correlation.
/// Ties go to the lowest style index; all-zero queries fall back to the
/// raw inner product. Style patches with zero norm score 0.
MatchResult match_patches_scored(const PatchBank& query, const PatchBank& style);
std::vector<int> match_patches(const PatchBank& query, const PatchBank& style);

/// Same as match_patches on extract_patches(features, k, stride) but reads
/// the query windows straight from the feature map.
MatchResult match_feature_map(const Tensor& features, int k, int stride, const PatchBank& style);

struct StyleTerm {
  double energy = 0.0;
  Tensor grad;
};

/// Sum of squared distances between each query window and its assigned
/// style patch, with the exact gradient over the feature map.
StyleTerm style_energy_and_grad(const Tensor& features, int k, int stride, const PatchBank& style,
                                std::span<const int> assignments);

struct Reconstruction {
  Tensor blend;
  /// Number of windows covering each cell.
  Tensor coverage;
};

/// Overlap average of the assigned style patches (the texture-optimization
/// M-step). Cells no window covers stay zero.
Reconstruction mrf_reconstruction(const Shape& shape, int k, int stride, const PatchBank& style,
                                  std::span<const int> assignments);

}  // namespace nmrf
