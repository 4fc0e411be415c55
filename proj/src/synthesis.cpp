#include "neuralmrf/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "neuralmrf/error.hpp"
#include "neuralmrf/log.hpp"

namespace nmrf {

namespace {

std::vector<double> to_flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor from_flat(Shape shape, std::span<const double> x) {
  Tensor t(shape);
  auto d = t.data();
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = static_cast<float>(x[i]);
  return t;
}

// Re-throws with the pyramid level prefixed, keeping the error category.
template <typename Fn>
auto at_level(int level, const PyramidLevel& size, Fn&& fn) {
  const std::string where = "pyramid level " + std::to_string(level) + " (" +
                            std::to_string(size.height) + "x" + std::to_string(size.width) + "): ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  } catch (const OptimizationError& e) {
    throw OptimizationError(where + e.what());
  } catch (const InputError& e) {
    throw InputError(where + e.what());
  } catch (const LoadError& e) {
    throw LoadError(where + e.what());
  }
}

struct LevelRun {
  std::vector<double> x;
  std::vector<double> energies;
  StopReason stop;
  EnergyReport first;
  EnergyReport last;
};

LevelRun optimize(const ObjectiveContext& ctx, const Tensor& init, const LbfgsOptions& opts,
                  int level, const TraceSink& trace) {
  LevelRun run;
  EnergyReport latest;
  int evaluations = 0;
  const auto record = [&](int iteration, const EnergyReport& r) {
    if (!trace) return;
    trace({level, iteration, r.total, r.weighted_style(ctx), r.content, r.tv});
  };
  const auto f = [&](std::span<const double> x, std::span<double> grad) {
    latest = evaluate(from_flat(init.shape(), x), ctx);
    const auto g = latest.grad.data();
    std::copy(g.begin(), g.end(), grad.begin());
    if (evaluations++ == 0) {
      run.first = latest;
      record(0, latest);
    }
    return latest.total;
  };
  const auto on_iteration = [&](int iteration, double) {
    run.last = latest;
    record(iteration, latest);
  };
  LbfgsResult res = minimize(f, to_flat(init), opts, on_iteration);
  if (res.iterations == 0) run.last = run.first;
  run.x = std::move(res.x);
  run.energies = std::move(res.trace);
  run.stop = res.reason;
  return run;
}

}  // namespace

std::vector<PyramidLevel> pyramid_schedule(int height, int width, int iterations, int min_size) {
  if (height < 1 || width < 1) throw ConfigError("output size must be at least 1x1");
  if (min_size < 1) throw ConfigError("pyramid minimum size must be >= 1");
  std::vector<PyramidLevel> levels{{height, width, iterations}};
  while (std::max(levels.back().height, levels.back().width) >= min_size &&
         std::max(levels.back().height, levels.back().width) > 1) {
    const auto& l = levels.back();
    levels.push_back({(l.height + 1) / 2, (l.width + 1) / 2, iterations});
  }
  std::ranges::reverse(levels);
  return levels;
}

Tensor noise_image(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uniform(0.0f, 255.0f);
  Tensor t(shape);
  for (float& v : t.data()) v = uniform(rng);
  return t;
}

Tensor clamp_pixels(const Tensor& image) {
  Tensor out = image;
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 255.0f);
  return out;
}

std::string format_trace(const TraceRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "level=%d iter=%d total=%.9g style=%.9g content=%.9g tv=%.9g",
                r.level, r.iteration, r.total, r.style, r.content, r.tv);
  return buf;
}

TransferResult run_transfer(const Network& net, const SynthesisJob& job, const TraceSink& trace) {
  job.config.validate();
  if (job.style.channels() != 3) throw ConfigError("style image must have 3 channels");
  const bool guided = job.config.alpha_content > 0.0;
  if (guided && !job.content) throw ConfigError("a content image is required when alpha_content > 0");

  int out_h = job.style.height();
  int out_w = job.style.width();
  if (guided) {
    out_h = job.content->height();
    out_w = job.content->width();
  } else if (job.out_height > 0 && job.out_width > 0) {
    out_h = job.out_height;
    out_w = job.out_width;
  }
  const auto levels = pyramid_schedule(out_h, out_w, job.iterations_per_level, job.min_size);
  const double out_long = std::max(out_h, out_w);

  TransferResult result;
  Tensor image = noise_image({3, levels.front().height, levels.front().width}, job.seed);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const PyramidLevel& level = levels[li];
    const int index = static_cast<int>(li);
    if (image.height() != level.height || image.width() != level.width) {
      image = bilinear_resize(image, level.height, level.width);
    }
    LevelTrace lt{level, {}, false, StopReason::kMaxIterations};

    const double factor = std::max(level.height, level.width) / out_long;
    const Tensor style = bilinear_resize(
        job.style, std::max(1, static_cast<int>(std::lround(job.style.height() * factor))),
        std::max(1, static_cast<int>(std::lround(job.style.width() * factor))));
    std::optional<Tensor> content;
    if (guided) content = bilinear_resize(*job.content, level.height, level.width);

    std::optional<ObjectiveContext> ctx;
    try {
      ctx = at_level(index, level, [&] { return make_context(net, job.config, style, content); });
    } catch (const ConfigError& e) {
      if (li + 1 == levels.size()) throw;
      log::warn(std::string(e.what()) + "; level skipped");
      lt.skipped = true;
      result.levels.push_back(std::move(lt));
      continue;
    }

    LbfgsOptions opts = job.lbfgs;
    opts.max_iters = level.iterations;
    LevelRun run = at_level(index, level, [&] { return optimize(*ctx, image, opts, index, trace); });
    image = from_flat(image.shape(), run.x);
    lt.energies = std::move(run.energies);
    lt.stop = run.stop;
    log::info("level " + std::to_string(index) + " " + std::to_string(level.height) + "x" +
              std::to_string(level.width) + ": " + std::to_string(lt.energies.size() - 1) +
              " iterations, stop=" + std::string(to_string(run.stop)));
    result.levels.push_back(std::move(lt));
  }
  result.image = clamp_pixels(image);
  return result;
}

InvertResult run_invert(const Network& net, const InvertJob& job, const TraceSink& trace) {
  if (job.taps.empty()) throw ConfigError("inversion needs at least one tap layer");
  if (!(job.alpha_tv >= 0.0)) throw ConfigError("alpha_tv must be >= 0");
  if (job.iterations < 1) throw ConfigError("inversion needs at least one iteration");

  const auto act_a = forward_tapped(net, job.image, job.taps, /*cache=*/false);
  std::optional<LayerActivations> act_b;
  if (job.blend_with) {
    const Tensor b = bilinear_resize(*job.blend_with, job.image.height(), job.image.width());
    act_b = forward_tapped(net, b, job.taps, /*cache=*/false);
  }

  ObjectiveContext ctx;
  ctx.net = &net;
  ctx.alpha_content = 1.0;
  ctx.alpha_tv = job.alpha_tv;
  for (const auto& tap : job.taps) {
    Tensor target = act_a.at(tap);
    if (act_b) {
      const auto a = act_a.at(tap).data();
      const auto b = act_b->at(tap).data();
      auto t = target.data();
      const auto lambda = static_cast<float>(job.lambda);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = lambda * a[i] + (1.0f - lambda) * b[i];
    }
    ctx.content.push_back({tap, std::move(target)});
  }

  LbfgsOptions opts = job.lbfgs;
  opts.max_iters = job.iterations;
  const Tensor init = noise_image(job.image.shape(), job.seed);
  const PyramidLevel size{job.image.height(), job.image.width(), job.iterations};
  LevelRun run = at_level(0, size, [&] { return optimize(ctx, init, opts, 0, trace); });

  InvertResult res;
  res.image = clamp_pixels(from_flat(init.shape(), run.x));
  res.energies = std::move(run.energies);
  res.initial_content = run.first.content;
  res.final_content = run.last.content;
  return res;
}

std::vector<MatchRow> run_match_report(const Network& net, const Tensor& a, const Tensor& b,
                                       const std::vector<PixelCoord>& queries,
                                       const std::vector<std::string>& layers, int k) {
  if (layers.empty()) throw ConfigError("match report needs at least one layer");
  for (const auto& q : queries) {
    if (q.y < 0 || q.x < 0 || q.y >= a.height() || q.x >= a.width()) {
      throw InputError("query (" + std::to_string(q.y) + "," + std::to_string(q.x) +
                       ") lies outside image A (" + std::to_string(a.height()) + "x" +
                       std::to_string(a.width()) + ")");
    }
  }
  const auto act_a = forward_tapped(net, a, layers, /*cache=*/false);
  const auto act_b = forward_tapped(net, b, layers, /*cache=*/false);

  std::vector<MatchRow> rows;
  for (const auto& layer : layers) {
    const int stride = layer_stride(layer);
    const Tensor& fa = act_a.at(layer);
    const PatchBank bank_b = extract_patches(act_b.at(layer), k);
    const PatchBank all_a = extract_patches(fa, k);
    const int positions_w = fa.width() - k + 1;
    const int positions_h = fa.height() - k + 1;

    PatchBank query = all_a;
    query.patches.clear();
    query.norms.clear();
    query.origins.clear();
    for (const auto& q : queries) {
      const int fy = std::min(q.y / stride, positions_h - 1);
      const int fx = std::min(q.x / stride, positions_w - 1);
      const std::size_t idx = static_cast<std::size_t>(fy) * positions_w + fx;
      const auto p = all_a.patch(idx);
      query.patches.insert(query.patches.end(), p.begin(), p.end());
      query.norms.push_back(all_a.norms[idx]);
      query.origins.push_back(all_a.origins[idx]);
    }
    const MatchResult m = match_patches_scored(query, bank_b);
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const PatchOrigin& o = bank_b.origins[m.index[i]];
      rows.push_back({layer, queries[i], {o.y * stride, o.x * stride}, m.ncc[i]});
    }
  }
  return rows;
}

}  // namespace nmrf
