#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "neuralmrf/lbfgs.hpp"
#include "neuralmrf/objective.hpp"
#include "neuralmrf/tensor.hpp"
#include "neuralmrf/vgg.hpp"

namespace nmrf {

struct PyramidLevel {
  int height = 0;
  int width = 0;
  int iterations = 200;
  friend bool operator==(const PyramidLevel&, const PyramidLevel&) = default;
};

/// Coarse-to-fine sizes: the output size is ceil-halved while its longest
/// side is at least `min_size`, then the list is reversed.
std::vector<PyramidLevel> pyramid_schedule(int height, int width, int iterations = 200,
                                           int min_size = 64);

/// Seeded uniform noise in [0, 255].
Tensor noise_image(Shape shape, std::uint64_t seed);

/// Rounds pixel values into [0, 255].
Tensor clamp_pixels(const Tensor& image);

/// One line of the optimisation trace.
struct TraceRecord {
  int level = 0;
  int iteration = 0;
  double total = 0.0;
  double style = 0.0;
  double content = 0.0;
  double tv = 0.0;
};

/// `level=<i> iter=<n> total=<e> style=<e> content=<e> tv=<e>`
std::string format_trace(const TraceRecord& r);

using TraceSink = std::function<void(const TraceRecord&)>;

struct SynthesisJob {
  Tensor style;
  /// Required iff config.alpha_content > 0.
  std::optional<Tensor> content;
  EnergyConfig config;
  std::uint64_t seed = 0;
  /// Output size for unguided synthesis; ignored when content is set.
  int out_height = 0;
  int out_width = 0;
  int iterations_per_level = 200;
  int min_size = 64;
  LbfgsOptions lbfgs;
};

struct LevelTrace {
  PyramidLevel size;
  /// Energies at the level's init and after each accepted step.
  std::vector<double> energies;
  bool skipped = false;
  StopReason stop = StopReason::kMaxIterations;
};

struct TransferResult {
  /// Final image, clamped to [0, 255].
  Tensor image;
  std::vector<LevelTrace> levels;
};

TransferResult run_transfer(const Network& net, const SynthesisJob& job,
                            const TraceSink& trace = {});

struct InvertJob {
  Tensor image;
  /// Optional second image; targets become lambda*phi(image) + (1-lambda)*phi(blend_with).
  std::optional<Tensor> blend_with;
  double lambda = 1.0;
  std::vector<std::string> taps{"relu4_1"};
  double alpha_tv = 0.001;
  int iterations = 200;
  std::uint64_t seed = 0;
  LbfgsOptions lbfgs;
};

struct InvertResult {
  Tensor image;
  std::vector<double> energies;
  /// Feature reconstruction energy at the noise init and at the result.
  double initial_content = 0.0;
  double final_content = 0.0;
};

InvertResult run_invert(const Network& net, const InvertJob& job, const TraceSink& trace = {});

struct PixelCoord {
  int y = 0;
  int x = 0;
};

struct MatchRow {
  std::string layer;
  PixelCoord query;
  /// Best match in image B, mapped back to pixels.
  PixelCoord match;
  float ncc = 0.0f;
};

/// For every layer and query pixel of `a`, finds the best matching k x k
/// neural patch of `b` and reports its pixel location and NCC score.
std::vector<MatchRow> run_match_report(const Network& net, const Tensor& a, const Tensor& b,
                                       const std::vector<PixelCoord>& queries,
                                       const std::vector<std::string>& layers, int k = 3);

}  // namespace nmrf
