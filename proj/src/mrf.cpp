#include "neuralmrf/mrf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neuralmrf/error.hpp"
#include "neuralmrf/log.hpp"
#include "neuralmrf/ops.hpp"

namespace nmrf {

namespace {

// Float scores within this fraction of |query| of the best are rescored in
// double precision so the argmax and its tie-break are exact.
constexpr double kRescoreMargin = 1e-3;
constexpr std::size_t kScoreBudget = std::size_t{1} << 24;

void check_window(const Shape& s, int k, int stride, const char* what) {
  if (k < 1 || stride < 1) throw ConfigError(std::string(what) + ": k and stride must be >= 1");
  if (k > s.height || k > s.width) {
    throw ConfigError(std::string(what) + ": patch size " + std::to_string(k) +
                      " exceeds feature map " + to_string(s));
  }
}

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

// Query windows arrive as a D x n row-major matrix (im2col layout).
MatchResult match_columns(std::span<const float> cols, int dim, std::size_t n,
                          const PatchBank& style) {
  if (style.count() == 0) throw ConfigError("match_patches: style bank is empty");
  if (style.dim() != dim) {
    throw ConfigError("match_patches: query patches have " + std::to_string(dim) +
                      " values, style patches " + std::to_string(style.dim()));
  }
  const std::size_t m = style.count();
  std::vector<float> inv_norm(m);
  for (std::size_t i = 0; i < m; ++i) inv_norm[i] = style.norms[i] > 0.0f ? 1.0f / style.norms[i] : 0.0f;

  MatchResult res;
  res.index.assign(n, 0);
  res.ncc.assign(n, 0.0f);

  const std::size_t block = std::clamp<std::size_t>(kScoreBudget / m, 1, 256);
  std::vector<float> qblock;
  std::vector<float> scores;
  for (std::size_t j0 = 0; j0 < n; j0 += block) {
    const std::size_t nb = std::min(block, n - j0);
    qblock.resize(static_cast<std::size_t>(dim) * nb);
    for (int d = 0; d < dim; ++d) {
      std::copy_n(cols.begin() + d * n + j0, nb, qblock.begin() + d * nb);
    }
    scores.resize(m * nb);
    // Style patches act as filters over the query windows.
    gemm(style.patches, qblock, scores, static_cast<int>(m), static_cast<int>(nb), dim);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t jj = 0; jj < static_cast<std::ptrdiff_t>(nb); ++jj) {
      std::vector<double> q(dim);
      for (int d = 0; d < dim; ++d) q[d] = qblock[d * nb + jj];
      double qn = 0.0;
      for (double v : q) qn += v * v;
      qn = std::sqrt(qn);
      const std::size_t j = j0 + jj;
      if (qn == 0.0) {
        // Every inner product with a zero query is zero: lowest index wins.
        res.index[j] = 0;
        res.ncc[j] = 0.0f;
        continue;
      }
      float best = -std::numeric_limits<float>::infinity();
      for (std::size_t i = 0; i < m; ++i) best = std::max(best, scores[i * nb + jj] * inv_norm[i]);
      const double threshold = best - kRescoreMargin * qn;

      int best_i = -1;
      double best_ncc = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (scores[i * nb + jj] * inv_norm[i] < threshold) continue;
        const auto s = style.patch(i);
        double dot = 0.0;
        double sn = 0.0;
        for (int d = 0; d < dim; ++d) {
          dot += q[d] * s[d];
          sn += static_cast<double>(s[d]) * s[d];
        }
        sn = std::sqrt(sn);
        const double ncc = sn > 0.0 ? dot / (qn * sn) : 0.0;
        if (ncc > best_ncc) {
          best_ncc = ncc;
          best_i = static_cast<int>(i);
        }
      }
      res.index[j] = best_i;
      res.ncc[j] = static_cast<float>(best_ncc);
    }
  }
  return res;
}

}  // namespace

PatchBank extract_patches(const Tensor& feature, int k, int stride, int copy) {
  check_window(feature.shape(), k, stride, "extract_patches");
  const int out_h = window_count(feature.height(), k, 0, stride);
  const int out_w = window_count(feature.width(), k, 0, stride);
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;

  PatchBank bank;
  bank.k = k;
  bank.channels = feature.channels();
  bank.stride = stride;
  const int dim = bank.dim();
  std::vector<float> cols(static_cast<std::size_t>(dim) * n);
  im2col(feature, k, 0, stride, cols);

  bank.patches.resize(cols.size());
  bank.norms.resize(n);
  bank.origins.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    float* dst = bank.patches.data() + j * dim;
    for (int d = 0; d < dim; ++d) dst[d] = cols[d * n + j];
    bank.norms[j] = static_cast<float>(norm_of({dst, static_cast<std::size_t>(dim)}));
    bank.origins[j] = {copy, static_cast<int>(j / out_w) * stride,
                       static_cast<int>(j % out_w) * stride};
  }
  bank.copies.push_back({1.0, 0.0, feature.shape()});
  return bank;
}

void append_bank(PatchBank& dst, const PatchBank& src) {
  if (dst.count() == 0 && dst.copies.empty()) {
    dst = src;
    return;
  }
  if (dst.k != src.k || dst.channels != src.channels) {
    throw ConfigError("append_bank: patch geometry differs");
  }
  dst.patches.insert(dst.patches.end(), src.patches.begin(), src.patches.end());
  dst.norms.insert(dst.norms.end(), src.norms.begin(), src.norms.end());
  dst.origins.insert(dst.origins.end(), src.origins.begin(), src.origins.end());
  dst.copies.insert(dst.copies.end(), src.copies.begin(), src.copies.end());
}

PatchBank build_style_bank(const Network& net, const Tensor& style_image, const std::string& layer,
                           int k, const AugmentationSet& aug, int stride) {
  const std::vector<std::string> taps{layer};
  const std::vector<double> no_rotation{0.0};
  const auto& rotations = aug.enable_rotations ? aug.rotations : no_rotation;

  PatchBank bank;
  bank.k = k;
  bank.channels = net.channels_at(layer);
  bank.stride = stride;
  bank.layer = layer;
  int copy = 0;
  for (double scale : aug.scales) {
    const int h = std::max(1, static_cast<int>(std::lround(style_image.height() * scale)));
    const int w = std::max(1, static_cast<int>(std::lround(style_image.width() * scale)));
    const Tensor scaled = bilinear_resize(style_image, h, w);
    for (double angle : rotations) {
      const Shape fs = net.tap_shape(layer, h, w);
      if (fs.height < k || fs.width < k) {
        log::warn("style copy at scale " + std::to_string(scale) + " gives a " + to_string(fs) +
                  " " + layer + " map, smaller than the patch; skipped");
        bank.copies.push_back({scale, angle, fs});
        ++copy;
        continue;
      }
      const Tensor img = rotate(scaled, angle);
      const auto act = forward_tapped(net, img, taps, /*cache=*/false);
      PatchBank part = extract_patches(act.at(layer), k, stride, copy);
      part.copies.front().scale = scale;
      part.copies.front().rotation = angle;
      bank.patches.insert(bank.patches.end(), part.patches.begin(), part.patches.end());
      bank.norms.insert(bank.norms.end(), part.norms.begin(), part.norms.end());
      bank.origins.insert(bank.origins.end(), part.origins.begin(), part.origins.end());
      bank.copies.push_back(part.copies.front());
      ++copy;
    }
  }
  if (bank.count() == 0) {
    throw ConfigError("every style copy is too small for " + std::to_string(k) + "x" +
                      std::to_string(k) + " patches at " + layer);
  }
  return bank;
}

MatchResult match_patches_scored(const PatchBank& query, const PatchBank& style) {
  if (query.k != style.k || query.channels != style.channels) {
    throw ConfigError("match_patches: query and style banks differ in patch size or channels");
  }
  const int dim = query.dim();
  const std::size_t n = query.count();
  std::vector<float> cols(static_cast<std::size_t>(dim) * n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto p = query.patch(j);
    for (int d = 0; d < dim; ++d) cols[d * n + j] = p[d];
  }
  return match_columns(cols, dim, n, style);
}

std::vector<int> match_patches(const PatchBank& query, const PatchBank& style) {
  return match_patches_scored(query, style).index;
}

MatchResult match_feature_map(const Tensor& features, int k, int stride, const PatchBank& style) {
  check_window(features.shape(), k, stride, "match_feature_map");
  if (style.k != k || style.channels != features.channels()) {
    throw ConfigError("match_feature_map: feature map and style bank differ in geometry");
  }
  const std::size_t n = static_cast<std::size_t>(window_count(features.height(), k, 0, stride)) *
                        window_count(features.width(), k, 0, stride);
  const int dim = features.channels() * k * k;
  std::vector<float> cols(static_cast<std::size_t>(dim) * n);
  im2col(features, k, 0, stride, cols);
  return match_columns(cols, dim, n, style);
}

StyleTerm style_energy_and_grad(const Tensor& features, int k, int stride, const PatchBank& style,
                                std::span<const int> assignments) {
  check_window(features.shape(), k, stride, "style_energy_and_grad");
  if (style.k != k || style.channels != features.channels()) {
    throw ConfigError("style_energy_and_grad: feature map and style bank differ in geometry");
  }
  const std::size_t n = static_cast<std::size_t>(window_count(features.height(), k, 0, stride)) *
                        window_count(features.width(), k, 0, stride);
  if (assignments.size() != n) {
    throw ConfigError("style_energy_and_grad: " + std::to_string(assignments.size()) +
                      " assignments for " + std::to_string(n) + " query patches");
  }
  for (int a : assignments) {
    if (a < 0 || static_cast<std::size_t>(a) >= style.count()) {
      throw ConfigError("style_energy_and_grad: assignment index out of range");
    }
  }
  const int dim = style.dim();
  std::vector<float> cols(static_cast<std::size_t>(dim) * n);
  im2col(features, k, 0, stride, cols);

  std::vector<double> partial(n, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(n); ++j) {
    const auto s = style.patch(assignments[j]);
    double e = 0.0;
    for (int d = 0; d < dim; ++d) {
      const float diff = cols[d * n + j] - s[d];
      e += static_cast<double>(diff) * diff;
      cols[d * n + j] = 2.0f * diff;
    }
    partial[j] = e;
  }
  StyleTerm term;
  for (double e : partial) term.energy += e;
  term.grad = Tensor(features.shape());
  col2im(cols, k, 0, stride, term.grad);
  return term;
}

Reconstruction mrf_reconstruction(const Shape& shape, int k, int stride, const PatchBank& style,
                                  std::span<const int> assignments) {
  check_window(shape, k, stride, "mrf_reconstruction");
  const int out_h = window_count(shape.height, k, 0, stride);
  const int out_w = window_count(shape.width, k, 0, stride);
  const std::size_t n = static_cast<std::size_t>(out_h) * out_w;
  if (assignments.size() != n || style.channels != shape.channels || style.k != k) {
    throw ConfigError("mrf_reconstruction: assignments do not fit the feature shape");
  }
  const int dim = style.dim();
  std::vector<float> cols(static_cast<std::size_t>(dim) * n);
  std::vector<float> ones(cols.size(), 1.0f);
  for (std::size_t j = 0; j < n; ++j) {
    const auto s = style.patch(assignments[j]);
    for (int d = 0; d < dim; ++d) cols[d * n + j] = s[d];
  }
  Reconstruction r{Tensor(shape), Tensor(shape)};
  col2im(cols, k, 0, stride, r.blend);
  col2im(ones, k, 0, stride, r.coverage);
  auto b = r.blend.data();
  const auto c = r.coverage.data();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = c[i] > 0.0f ? b[i] / c[i] : 0.0f;
  return r;
}

}  // namespace nmrf
