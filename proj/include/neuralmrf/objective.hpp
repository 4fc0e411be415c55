#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neuralmrf/mrf.hpp"
#include "neuralmrf/tensor.hpp"
#include "neuralmrf/vgg.hpp"

namespace nmrf {

/// Every knob of the combined energy
///   sum_l w_l * E_style(l) + alpha_content * E_content + alpha_tv * TV.
struct EnergyConfig {
  double alpha_content = 1.0;
  double alpha_tv = 0.001;
  std::vector<std::string> mrf_layers{"relu3_1", "relu4_1"};
  std::vector<double> mrf_layer_weights{1.0, 1.0};
  std::string content_layer = "relu4_2";
  int patch_size = 3;
  int stride = 1;
  AugmentationSet augmentation;
  /// Divide style / content energies by their element counts.
  bool normalize = false;

  /// Throws ConfigError on negative weights, unknown layers or bad sizes.
  void validate() const;
};

struct TermValue {
  double energy = 0.0;
  Tensor grad;
};

/// ||act - target||^2 and its gradient 2 (act - target).
TermValue content_energy_and_grad(const Tensor& act, const Tensor& target);

/// Sum of squared forward differences along rows and columns, per channel.
TermValue tv_energy_and_grad(const Tensor& image);

struct MrfTerm {
  std::string layer;
  double weight = 1.0;
  PatchBank bank;
};

struct ContentTerm {
  std::string layer;
  Tensor target;
};

/// Everything `evaluate` needs for one pyramid level. Immutable once built.
struct ObjectiveContext {
  const Network* net = nullptr;
  std::vector<MrfTerm> mrf;
  std::vector<ContentTerm> content;
  double alpha_content = 1.0;
  double alpha_tv = 0.001;
  int patch_size = 3;
  int stride = 1;
  bool normalize = false;
};

/// Builds style banks from `style` and content targets from `content` for
/// images of the content size. `content` may be empty when alpha_content is 0.
ObjectiveContext make_context(const Network& net, const EnergyConfig& config, const Tensor& style,
                              const std::optional<Tensor>& content);

struct EnergyReport {
  double total = 0.0;
  /// Unweighted energy per MRF term, in context order.
  std::vector<double> style;
  double content = 0.0;
  double tv = 0.0;
  Tensor grad;
  /// Nearest-neighbour assignment per MRF term used for this evaluation.
  std::vector<std::vector<int>> assignments;

  /// Weighted sum of the style terms.
  double weighted_style(const ObjectiveContext& ctx) const;
};

/// Energy and image gradient. When `frozen` is non-empty its assignments
/// replace the matching step (one vector per MRF term).
EnergyReport evaluate(const Tensor& image, const ObjectiveContext& ctx,
                      std::span<const std::vector<int>> frozen = {});

}  // namespace nmrf
