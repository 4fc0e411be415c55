// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "neuralmrf/image_io.hpp"
#include "neuralmrf/log.hpp"
#include "neuralmrf/mrf.hpp"
#include "neuralmrf/objective.hpp"
#include "neuralmrf/ops.hpp"
#include "neuralmrf/synthesis.hpp"
#include "neuralmrf/vgg.hpp"
#include "reference.hpp"

using namespace nmrf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

const Network& tiny_net() {
  static const Network net = make_test_network(42, 0.125);
  return net;
}

ConvSpec random_conv(int in, int out, std::uint64_t seed) {
  ConvSpec spec(in, out);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (float& w : spec.weights) w = u(rng);
  for (float& b : spec.bias) b = u(rng);
  return spec;
}

std::vector<std::vector<double>> rows_of(const PatchBank& bank) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < bank.count(); ++i) {
    const auto p = bank.patch(i);
    rows.emplace_back(p.begin(), p.end());
  }
  return rows;
}

PatchBank bank_from_rows(int k, int channels, const std::vector<std::vector<float>>& rows) {
  PatchBank b;
  b.k = k;
  b.channels = channels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = 0.0;
    for (float v : rows[i]) {
      b.patches.push_back(v);
      s += static_cast<double>(v) * v;
    }
    b.norms.push_back(static_cast<float>(std::sqrt(s)));
    b.origins.push_back({0, 0, static_cast<int>(i)});
  }
  return b;
}

bool non_increasing(const std::vector<double>& t) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[i - 1]) return false;
  }
  return true;
}

// 1. Finite-difference checks of every backward op.
Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto check = [&](const std::string& name, std::span<const float> analytic,
                         const std::vector<double>& numeric, double tol) {
    const double err = ref::relative_error(analytic, numeric);
    o.detail << " " << name << "=" << err;
    o.require(err < tol, name + " >= " + std::to_string(tol));
  };

  {
    const Tensor in = ref::random_tensor({3, 8, 8}, 1);
    const ConvSpec spec = random_conv(3, 4, 2);
    const auto w = ref::random_weights(4 * 64, 3);
    const Tensor g = conv2d_backward(in, spec, ref::weights_tensor({4, 8, 8}, w));
    check("conv", g.data(),
          ref::numeric_gradient(
              [&](const ref::Map& x) { return ref::weighted_sum(ref::conv(x, spec), w); },
              ref::from_tensor(in), 1e-3),
          1e-4);
  }
  {
    Tensor in = ref::random_tensor({4, 8, 8}, 4);
    for (float& v : in.data()) {
      if (std::abs(v) < 1e-3f) v = v < 0 ? v - 1e-3f : v + 1e-3f;
    }
    const auto w = ref::random_weights(in.size(), 5);
    const Tensor g = relu_backward(in, ref::weights_tensor(in.shape(), w));
    check("relu", g.data(),
          ref::numeric_gradient(
              [&](const ref::Map& x) { return ref::weighted_sum(ref::relu(x), w); },
              ref::from_tensor(in), 1e-4),
          1e-4);
  }
  {
    const Tensor in = ref::random_tensor({4, 9, 7}, 6);
    const MaxPoolResult p = maxpool2_forward(in);
    const auto w = ref::random_weights(p.output.size(), 7);
    const Tensor g = maxpool2_backward(p, ref::weights_tensor(p.output.shape(), w));
    check("pool", g.data(),
          ref::numeric_gradient(
              [&](const ref::Map& x) { return ref::weighted_sum(ref::maxpool(x), w); },
              ref::from_tensor(in), 1e-6),
          1e-4);
  }
  {
    const Tensor img = ref::random_tensor({3, 8, 8}, 8, 0.0f, 255.0f);
    check("tv", tv_energy_and_grad(img).grad.data(),
          ref::numeric_gradient(ref::tv_energy, ref::from_tensor(img), 1e-3), 1e-4);
  }
  {
    const Tensor act = ref::random_tensor({3, 6, 6}, 9);
    const Tensor target = ref::random_tensor({3, 6, 6}, 10);
    const ref::Map tm = ref::from_tensor(target);
    check("content", content_energy_and_grad(act, target).grad.data(),
          ref::numeric_gradient([&](const ref::Map& x) { return ref::content_energy(x, tm); },
                                ref::from_tensor(act), 1e-4),
          1e-4);
  }
  {
    const Tensor f = ref::random_tensor({2, 6, 6}, 11);
    const PatchBank s = extract_patches(ref::random_tensor({2, 7, 8}, 12), 3);
    const std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
    const auto styles = rows_of(s);
    check("style", style_energy_and_grad(f, 3, 1, s, assign).grad.data(),
          ref::numeric_gradient(
              [&](const ref::Map& x) { return ref::style_energy(x, 3, 1, styles, assign); },
              ref::from_tensor(f), 1e-4),
          1e-4);
  }
  {
    EnergyConfig c;
    c.mrf_layers = {"relu2_1", "relu3_1"};
    c.augmentation = AugmentationSet::identity();
    const Tensor style = ref::textured_image(16, 16, 13);
    const Tensor content = ref::textured_image(16, 16, 14);
    const Tensor img = ref::textured_image(16, 16, 15);
    const ObjectiveContext ctx = make_context(tiny_net(), c, style, content);
    const EnergyReport r = evaluate(img, ctx);
    std::vector<std::vector<std::vector<double>>> banks;
    for (const auto& m : ctx.mrf) banks.push_back(rows_of(m.bank));
    const ref::Map target = ref::forward(tiny_net(), ref::from_tensor(content), c.content_layer);
    const auto total = [&](const ref::Map& x) {
      double e = 0.0;
      for (std::size_t i = 0; i < ctx.mrf.size(); ++i) {
        e += ctx.mrf[i].weight * ref::style_energy(ref::forward(tiny_net(), x, ctx.mrf[i].layer),
                                                   3, 1, banks[i], r.assignments[i]);
      }
      e += c.alpha_content *
           ref::content_energy(ref::forward(tiny_net(), x, c.content_layer), target);
      return e + c.alpha_tv * ref::tv_energy(x);
    };
    check("objective", r.grad.data(), ref::numeric_gradient(total, ref::from_tensor(img), 1e-3),
          1e-3);
  }
  const double secs = seconds_since(t0);
  o.detail << " runtime=" << secs << "s";
  o.require(secs < 120.0, "runtime >= 120 s");
  return o;
}

// 2. Matching agrees exactly with a brute-force NCC argmax.
Outcome matching_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  int instances = 0;
  int mismatched = 0;
  std::size_t queries_total = 0;
  for (int inst = 0; inst < 120; ++inst) {
    const int channels = 1 + static_cast<int>(rng() % 8);
    const int nq = 1 + static_cast<int>(rng() % 200);
    const int ns = 1 + static_cast<int>(rng() % 500);
    const int dim = channels * 9;
    // Every third instance is ReLU-like (many zeros); every fifth has
    // duplicated and rescaled style rows to exercise the tie-break.
    const bool relu_like = inst % 3 == 0;
    const auto draw = [&] {
      std::vector<float> v(dim);
      for (float& x : v) {
        x = u(rng);
        if (relu_like) x = std::max(x, 0.0f) * (u(rng) > 0.0f ? 1.0f : 0.0f);
      }
      return v;
    };
    std::vector<std::vector<float>> srows(ns);
    for (auto& r : srows) r = draw();
    if (inst % 5 == 0 && ns > 4) {
      srows[ns - 1] = srows[0];
      srows[ns - 2] = srows[1];
      for (float& x : srows[ns - 2]) x *= 2.0f;
      std::fill(srows[ns / 2].begin(), srows[ns / 2].end(), 0.0f);
    }
    std::vector<std::vector<float>> qrows(nq);
    for (auto& r : qrows) r = draw();
    if (inst % 5 == 0) {
      qrows[0] = srows[ns - 1];
      std::fill(qrows[nq - 1].begin(), qrows[nq - 1].end(), 0.0f);
    }
    const PatchBank style = bank_from_rows(3, channels, srows);
    const PatchBank query = bank_from_rows(3, channels, qrows);
    const std::vector<int> got = match_patches(query, style);
    const auto styles = rows_of(style);
    const auto queries = rows_of(query);
    for (int i = 0; i < nq; ++i) {
      if (got[i] != ref::brute_force_match(queries[i], styles)) ++mismatched;
    }
    queries_total += nq;
    ++instances;
  }
  o.detail << " instances=" << instances << " queries=" << queries_total
           << " mismatches=" << mismatched;
  o.require(instances >= 100, "fewer than 100 instances");
  o.require(mismatched == 0, "index mismatch");
  return o;
}

// 3. Zero gradient at the overlap average; re-matching never raises E_s.
Outcome em_property() {
  Outcome o;
  float worst_grad = 0.0f;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor f = ref::random_tensor({4, 9, 8}, 300 + seed);
    const PatchBank s = extract_patches(ref::random_tensor({4, 10, 10}, 400 + seed), 3);
    const std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
    const Reconstruction rec = mrf_reconstruction(f.shape(), 3, 1, s, assign);
    const StyleTerm at_blend = style_energy_and_grad(rec.blend, 3, 1, s, assign);
    for (float v : at_blend.grad.data()) {
      worst_grad = std::max(worst_grad, std::abs(v));
    }
  }
  o.detail << " max|grad|@blend=" << worst_grad;
  o.require(worst_grad < 1e-4f, "gradient at reconstruction >= 1e-4");

  int increases = 0;
  int rounds_total = 0;
  double worst_rise = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor f = ref::random_tensor({4, 9, 8}, 500 + seed);
    const PatchBank s = extract_patches(ref::random_tensor({4, 10, 10}, 600 + seed), 3);
    std::vector<int> assign = match_feature_map(f, 3, 1, s).index;
    for (int round = 0; round < 20; ++round) {
      f = mrf_reconstruction(f.shape(), 3, 1, s, assign).blend;
      const double before = style_energy_and_grad(f, 3, 1, s, assign).energy;
      assign = match_feature_map(f, 3, 1, s).index;
      const double after = style_energy_and_grad(f, 3, 1, s, assign).energy;
      ++rounds_total;
      if (after > before * (1.0 + 1e-9)) {
        ++increases;
        worst_rise = std::max(worst_rise, (after - before) / before);
      }
    }
  }
  o.detail << " rematch_increases=" << increases << "/" << rounds_total
           << " worst_relative_rise=" << worst_rise;
  o.require(increases == 0, "re-matching increased E_s");
  return o;
}

// 4. Self-synthesis on a 64x64 image with a two-level pyramid.
Outcome self_synthesis() {
  Outcome o;
  const Tensor img = ref::textured_image(64, 64, 77);
  SynthesisJob job;
  job.style = img;
  job.content = img;
  job.config.augmentation = AugmentationSet::identity();
  job.seed = 1;

  const auto t0 = Clock::now();
  const TransferResult a = run_transfer(tiny_net(), job);
  const double secs = seconds_since(t0);
  const TransferResult b = run_transfer(tiny_net(), job);

  const ObjectiveContext ctx = make_context(tiny_net(), job.config, img, img);
  const double noise = evaluate(noise_image(img.shape(), job.seed), ctx).total;
  const double final_e = a.levels.back().energies.back();

  o.detail << " levels=" << a.levels.size() << " noise_init=" << noise << " final=" << final_e
           << " ratio=" << final_e / noise << " runtime=" << secs << "s";
  o.require(a.levels.size() == 2, "pyramid is not two levels");
  o.require(final_e <= 0.1 * noise, "final energy above 10% of noise init");
  for (const auto& l : a.levels) o.require(non_increasing(l.energies), "non-monotone trace");
  o.require(encode_png(a.image) == encode_png(b.image), "output bytes differ between runs");
  o.require(secs < 60.0, "runtime >= 60 s");
  return o;
}

// 5. Defaults equal the published constants.
Outcome configuration_fidelity() {
  Outcome o;
  const EnergyConfig c;
  const SynthesisJob job;
  o.require(c.alpha_tv == 0.001, "alpha_tv");
  o.require(c.alpha_content == 1.0, "alpha_content");
  o.require(c.patch_size == 3, "patch size");
  o.require(c.stride == 1, "stride");
  o.require(job.iterations_per_level == 200, "iterations per level");
  o.require(job.min_size == 64, "pyramid min size");
  o.require(pyramid_schedule(64, 64).size() == 2 && pyramid_schedule(63, 63).size() == 1 &&
                pyramid_schedule(384, 384).front().height == 48,
            "pyramid stops below 64");
  o.require(c.augmentation.scales == std::vector<double>{0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15},
            "scales");
  const double pi = std::numbers::pi;
  o.require(c.augmentation.rotations ==
                std::vector<double>{-pi / 12, -pi / 24, 0.0, pi / 24, pi / 12},
            "rotations");
  o.require(!c.augmentation.enable_rotations, "rotations off by default");
  o.require(c.mrf_layers == std::vector<std::string>{"relu3_1", "relu4_1"}, "mrf layers");
  o.require(c.content_layer == "relu4_2", "content layer");
  o.detail << " alpha_tv=" << c.alpha_tv << " k=" << c.patch_size << " stride=" << c.stride
           << " iters=" << job.iterations_per_level << " min_size=" << job.min_size
           << " scales=" << c.augmentation.scales.size()
           << " rotations=" << c.augmentation.rotations.size();
  return o;
}

// 6. relu2_1 inversion of a 32x32 image.
Outcome inversion() {
  Outcome o;
  InvertJob job;
  job.image = ref::textured_image(32, 32, 66);
  job.taps = {"relu2_1"};
  job.iterations = 200;
  job.seed = 3;
  const InvertResult r = run_invert(tiny_net(), job);
  const double ratio = r.final_content / r.initial_content;
  o.detail << " noise_init=" << r.initial_content << " final=" << r.final_content
           << " ratio=" << ratio << " iterations=" << r.energies.size() - 1;
  o.require(ratio < 0.05, "final content energy >= 5% of noise init");
  return o;
}

// 7. Shift recovery at relu3_1.
Outcome shift_recovery() {
  Outcome o;
  constexpr int kShift = 8;
  const Tensor base = ref::textured_image(96, 96 + kShift, 55);
  Tensor a(3, 96, 96);
  Tensor b(3, 96, 96);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        a.at(c, y, x) = base.at(c, y, x + kShift);
        b.at(c, y, x) = base.at(c, y, x);
      }
  // b(y, x + 8) == a(y, x): each query should land 8 px to the right.
  std::mt19937_64 rng(7);
  std::vector<PixelCoord> queries;
  for (int i = 0; i < 20; ++i) {
    queries.push_back({static_cast<int>(rng() % 80), static_cast<int>(rng() % (80 - kShift))});
  }
  const auto rows = run_match_report(tiny_net(), a, b, queries, {"relu3_1"});
  int hits = 0;
  for (const auto& r : rows) {
    const int dy = r.match.y - r.query.y;
    const int dx = r.match.x - (r.query.x + kShift);
    if (std::abs(dy) <= 4 && std::abs(dx) <= 4) ++hits;
  }
  o.detail << " recovered=" << hits << "/" << rows.size();
  o.require(hits >= 18, "fewer than 90% of queries recovered the shift");
  return o;
}

}  // namespace

int main() {
  log::set_level(log::Level::kQuiet);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1 gradient suite", gradient_suite},
      {"AC2 matching oracle", matching_oracle},
      {"AC3 EM/quadratic property", em_property},
      {"AC4 self-synthesis", self_synthesis},
      {"AC5 configuration fidelity", configuration_fidelity},
      {"AC6 inversion", inversion},
      {"AC7 shift recovery", shift_recovery},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    if (!o.pass) ++failed;
    std::printf("[%s] %s:%s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
