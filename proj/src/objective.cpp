#include "neuralmrf/objective.hpp"

#include <algorithm>
#include <map>

#include "neuralmrf/error.hpp"

namespace nmrf {

void EnergyConfig::validate() const {
  if (!(alpha_content >= 0.0)) throw ConfigError("alpha_content must be >= 0");
  if (!(alpha_tv >= 0.0)) throw ConfigError("alpha_tv must be >= 0");
  if (patch_size < 1) throw ConfigError("patch size must be >= 1");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (mrf_layers.size() != mrf_layer_weights.size()) {
    throw ConfigError("need one weight per MRF layer (" + std::to_string(mrf_layers.size()) +
                      " layers, " + std::to_string(mrf_layer_weights.size()) + " weights)");
  }
  for (double w : mrf_layer_weights) {
    if (!(w >= 0.0)) throw ConfigError("MRF layer weights must be >= 0");
  }
  for (const auto& l : mrf_layers) layer_index(l);
  layer_index(content_layer);
  if (augmentation.scales.empty()) throw ConfigError("augmentation needs at least one scale");
  for (double s : augmentation.scales) {
    if (!(s > 0.0)) throw ConfigError("augmentation scales must be positive");
  }
}

TermValue content_energy_and_grad(const Tensor& act, const Tensor& target) {
  require_same_shape(act.shape(), target.shape(), "content term");
  TermValue t{0.0, Tensor(act.shape())};
  const auto a = act.data();
  const auto b = target.data();
  auto g = t.grad.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = a[i] - b[i];
    t.energy += static_cast<double>(d) * d;
    g[i] = 2.0f * d;
  }
  return t;
}

TermValue tv_energy_and_grad(const Tensor& image) {
  const int h = image.height();
  const int w = image.width();
  TermValue t{0.0, Tensor(image.shape())};
  for (int c = 0; c < image.channels(); ++c) {
    const auto x = image.channel(c);
    auto g = t.grad.channel(c);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int p = i * w + j;
        if (j + 1 < w) {
          const double d = static_cast<double>(x[p + 1]) - x[p];
          t.energy += d * d;
          g[p + 1] += static_cast<float>(2.0 * d);
          g[p] -= static_cast<float>(2.0 * d);
        }
        if (i + 1 < h) {
          const double d = static_cast<double>(x[p + w]) - x[p];
          t.energy += d * d;
          g[p + w] += static_cast<float>(2.0 * d);
          g[p] -= static_cast<float>(2.0 * d);
        }
      }
    }
  }
  return t;
}

ObjectiveContext make_context(const Network& net, const EnergyConfig& config, const Tensor& style,
                              const std::optional<Tensor>& content) {
  config.validate();
  ObjectiveContext ctx;
  ctx.net = &net;
  ctx.alpha_content = config.alpha_content;
  ctx.alpha_tv = config.alpha_tv;
  ctx.patch_size = config.patch_size;
  ctx.stride = config.stride;
  ctx.normalize = config.normalize;
  for (std::size_t i = 0; i < config.mrf_layers.size(); ++i) {
    if (config.mrf_layer_weights[i] == 0.0) continue;
    ctx.mrf.push_back({config.mrf_layers[i], config.mrf_layer_weights[i],
                       build_style_bank(net, style, config.mrf_layers[i], config.patch_size,
                                        config.augmentation, config.stride)});
  }
  if (config.alpha_content > 0.0) {
    if (!content) throw ConfigError("a content image is required when alpha_content > 0");
    const std::vector<std::string> taps{config.content_layer};
    auto act = forward_tapped(net, *content, taps, /*cache=*/false);
    ctx.content.push_back({config.content_layer, act.at(config.content_layer)});
  }
  return ctx;
}

double EnergyReport::weighted_style(const ObjectiveContext& ctx) const {
  double s = 0.0;
  for (std::size_t i = 0; i < style.size() && i < ctx.mrf.size(); ++i) s += ctx.mrf[i].weight * style[i];
  return s;
}

EnergyReport evaluate(const Tensor& image, const ObjectiveContext& ctx,
                      std::span<const std::vector<int>> frozen) {
  if (ctx.net == nullptr) throw ConfigError("objective context has no network");
  if (!frozen.empty() && frozen.size() != ctx.mrf.size()) {
    throw ConfigError("frozen assignments must cover every MRF term");
  }
  const bool use_content = ctx.alpha_content > 0.0 && !ctx.content.empty();

  std::vector<std::string> taps;
  for (const auto& m : ctx.mrf) taps.push_back(m.layer);
  if (use_content) {
    for (const auto& c : ctx.content) taps.push_back(c.layer);
  }
  std::ranges::sort(taps);
  taps.erase(std::unique(taps.begin(), taps.end()), taps.end());

  EnergyReport report;
  report.style.assign(ctx.mrf.size(), 0.0);
  report.assignments.resize(ctx.mrf.size());
  std::map<std::string, Tensor, std::less<>> tap_grads;
  const auto add_grad = [&](const std::string& layer, Tensor g) {
    auto [it, inserted] = tap_grads.try_emplace(layer, std::move(g));
    if (!inserted) it->second += g;
  };

  LayerActivations act;
  if (!taps.empty()) act = forward_tapped(*ctx.net, image, taps, /*cache=*/true);

  for (std::size_t i = 0; i < ctx.mrf.size(); ++i) {
    const MrfTerm& term = ctx.mrf[i];
    const Tensor& features = act.at(term.layer);
    if (frozen.empty()) {
      report.assignments[i] =
          match_feature_map(features, ctx.patch_size, ctx.stride, term.bank).index;
    } else {
      report.assignments[i] = frozen[i];
    }
    StyleTerm s = style_energy_and_grad(features, ctx.patch_size, ctx.stride, term.bank,
                                        report.assignments[i]);
    double scale = term.weight;
    if (ctx.normalize) {
      const double n = static_cast<double>(report.assignments[i].size()) * term.bank.dim();
      s.energy /= n;
      scale /= n;
    }
    report.style[i] = s.energy;
    report.total += term.weight * s.energy;
    s.grad *= static_cast<float>(scale);
    add_grad(term.layer, std::move(s.grad));
  }

  if (use_content) {
    for (const ContentTerm& c : ctx.content) {
      TermValue t = content_energy_and_grad(act.at(c.layer), c.target);
      double scale = ctx.alpha_content;
      if (ctx.normalize) {
        const double n = static_cast<double>(c.target.size());
        t.energy /= n;
        scale /= n;
      }
      report.content += t.energy;
      t.grad *= static_cast<float>(scale);
      add_grad(c.layer, std::move(t.grad));
    }
    report.total += ctx.alpha_content * report.content;
  }

  report.grad = tap_grads.empty() ? Tensor(image.shape())
                                  : backward_multi_tap(*ctx.net, act, tap_grads);
  if (ctx.alpha_tv > 0.0) {
    TermValue tv = tv_energy_and_grad(image);
    report.tv = tv.energy;
    report.total += ctx.alpha_tv * tv.energy;
    tv.grad *= static_cast<float>(ctx.alpha_tv);
    report.grad += tv.grad;
  }
  return report;
}

}  // namespace nmrf
