// neuralmrf: style transfer, feature inversion and patch-match reports over a
// fixed VGG-19 trunk.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "neuralmrf/error.hpp"
#include "neuralmrf/image_io.hpp"
#include "neuralmrf/log.hpp"
#include "neuralmrf/ops.hpp"
#include "neuralmrf/synthesis.hpp"
#include "neuralmrf/vgg.hpp"

namespace {

namespace fs = std::filesystem;
using namespace nmrf;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

/// Bad flag combinations and unusable input files.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NetworkFlags {
  std::string weights;
  std::optional<std::uint64_t> test_net;
  double test_net_width = 0.125;
};

struct CommonFlags {
  NetworkFlags net;
  int threads = 0;
  int verbose = 0;
  bool quiet = false;
  std::string trace_path;
  std::uint64_t seed = 0;
};

void add_network_flags(CLI::App* app, NetworkFlags& f) {
  auto* w = app->add_option("--weights", f.weights, "NMRF weight file");
  auto* t = app->add_option("--test-net", f.test_net,
                            "Use a seeded random test network instead of real weights");
  w->excludes(t);
  app->add_option("--test-net-width", f.test_net_width, "Width scale of the test network")
      ->check(CLI::IsMember({0.125, 0.25, 0.5}));
}

void add_common_flags(CLI::App* app, CommonFlags& f) {
  add_network_flags(app, f.net);
  app->add_option("--threads", f.threads, "Worker threads (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_flag("-v,--verbose", f.verbose, "More log output");
  app->add_flag("-q,--quiet", f.quiet, "Only errors");
  app->add_option("--trace", f.trace_path, "Write machine-readable trace lines to this file");
  app->add_option("--seed", f.seed, "Seed for the noise initialisation");
  // Consumed by expand_config before parsing; registered for --help only.
  app->add_option("--config", "key=value file with flag defaults; flags override it");
}

// EnergyConfig field names that differ from their flag.
const std::map<std::string, std::string>& config_aliases() {
  static const std::map<std::string, std::string> aliases{
      {"mrf-layer-weights", "mrf-weights"},
      {"enable-rotations", "rotations"},
      {"iterations", "iters"},
      {"iterations-per-level", "iters"},
  };
  return aliases;
}

bool is_true(std::string v) {
  std::ranges::transform(v, v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("expected a boolean, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// Flags read from a key=value file, in file order.
std::vector<std::string> read_config_file(const std::string& path,
                                          const std::set<std::string>& bool_flags) {
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path);
  std::vector<std::string> args;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    while (!key.empty() && key.front() == '-') key.erase(0, 1);
    std::ranges::replace(key, '_', '-');
    if (auto it = config_aliases().find(key); it != config_aliases().end()) key = it->second;
    if (bool_flags.contains(key)) {
      if (is_true(value)) args.push_back("--" + key);
    } else {
      args.push_back("--" + key);
      args.push_back(value);
    }
  }
  return args;
}

// Splices `--config FILE` contents in right after the subcommand so that
// later command-line flags win. Returns the arguments in CLI11's reversed order.
std::vector<std::string> expand_config(int argc, char** argv,
                                       const std::set<std::string>& bool_flags) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> out;
  std::vector<std::string> from_file;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      const auto more = read_config_file(args[++i], bool_flags);
      from_file.insert(from_file.end(), more.begin(), more.end());
    } else if (args[i].starts_with("--config=")) {
      const auto more = read_config_file(args[i].substr(9), bool_flags);
      from_file.insert(from_file.end(), more.begin(), more.end());
    } else {
      out.push_back(args[i]);
    }
  }
  if (!from_file.empty() && !out.empty()) {
    out.insert(out.begin() + 1, from_file.begin(), from_file.end());
  }
  std::ranges::reverse(out);
  return out;
}

// Repeated scalar options keep the last value so flags override the config file.
void take_last(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    if (opt->check_lname("coords") || opt->check_lname("verbose")) continue;
    opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
}

Network load_network(const NetworkFlags& f) {
  if (!f.weights.empty()) {
    if (!fs::exists(f.weights)) throw UsageError("weight file not found: " + f.weights);
    return load_weights(f.weights);
  }
  if (f.test_net) return make_test_network(*f.test_net, f.test_net_width);
  throw UsageError("one of --weights PATH or --test-net SEED is required");
}

Tensor load_image(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(std::string(what) + " image not found: " + path);
  try {
    return read_image(path);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_reals(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw UsageError(std::string("bad number '") + item + "' in " + what);
    }
  }
  return out;
}

class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw UsageError("cannot open trace file " + path);
    }
  }
  TraceSink sink() {
    return [this](const TraceRecord& r) {
      const std::string line = format_trace(r);
      log::info(line);
      if (file_.is_open()) file_ << line << '\n';
    };
  }

 private:
  std::ofstream file_;
};

void apply_common(const CommonFlags& f) {
  log::set_level(f.quiet ? log::Level::kQuiet
                         : (f.verbose > 0 ? log::Level::kDebug : log::Level::kInfo));
  set_num_threads(f.threads);
}

struct TransferFlags {
  CommonFlags common;
  std::string style;
  std::string content;
  std::string output;
  double alpha_content = EnergyConfig{}.alpha_content;
  double alpha_tv = EnergyConfig{}.alpha_tv;
  std::string mrf_layers = "relu3_1,relu4_1";
  std::string mrf_weights = "1,1";
  std::string content_layer = EnergyConfig{}.content_layer;
  int patch_size = EnergyConfig{}.patch_size;
  int stride = EnergyConfig{}.stride;
  int iters = SynthesisJob{}.iterations_per_level;
  int min_size = SynthesisJob{}.min_size;
  int memory = LbfgsOptions{}.memory;
  std::string scales = "0.85,0.9,0.95,1,1.05,1.1,1.15";
  bool rotations = false;
  std::string size;
  bool normalize = false;
};

int run_transfer_cmd(const TransferFlags& f) {
  apply_common(f.common);
  if (f.alpha_content > 0.0 && f.content.empty()) {
    throw UsageError("--content is required when --alpha-content > 0");
  }
  SynthesisJob job;
  job.style = load_image(f.style, "style");
  if (f.alpha_content > 0.0) {
    job.content = load_image(f.content, "content");
  } else if (!f.content.empty()) {
    log::warn("--alpha-content is 0: content image ignored (unguided synthesis)");
  }
  if (!f.size.empty()) {
    int h = 0;
    int w = 0;
    char sep = 0;
    std::istringstream in(f.size);
    if (!(in >> h >> sep >> w) || sep != 'x' || h < 1 || w < 1) {
      throw UsageError("--size must look like HEIGHTxWIDTH");
    }
    if (job.content) {
      log::warn("--size ignored: output takes the content image size");
    } else {
      job.out_height = h;
      job.out_width = w;
    }
  }
  EnergyConfig& cfg = job.config;
  cfg.alpha_content = f.alpha_content;
  cfg.alpha_tv = f.alpha_tv;
  cfg.mrf_layers = split_list(f.mrf_layers);
  cfg.mrf_layer_weights = parse_reals(f.mrf_weights, "--mrf-weights");
  cfg.content_layer = f.content_layer;
  cfg.patch_size = f.patch_size;
  cfg.stride = f.stride;
  cfg.augmentation.scales = parse_reals(f.scales, "--scales");
  cfg.augmentation.enable_rotations = f.rotations;
  cfg.normalize = f.normalize;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  job.seed = f.common.seed;
  job.iterations_per_level = f.iters;
  job.min_size = f.min_size;
  job.lbfgs.memory = f.memory;

  const Network net = load_network(f.common.net);
  TraceWriter trace(f.common.trace_path);
  const TransferResult res = run_transfer(net, job, trace.sink());
  write_png(res.image, f.output);
  return 0;
}

struct InvertFlags {
  CommonFlags common;
  std::string image;
  std::string blend_with;
  double lambda = 1.0;
  std::string layers = "relu4_1";
  double alpha_tv = InvertJob{}.alpha_tv;
  int iters = InvertJob{}.iterations;
  int memory = LbfgsOptions{}.memory;
  std::string output;
};

int run_invert_cmd(const InvertFlags& f) {
  apply_common(f.common);
  InvertJob job;
  job.image = load_image(f.image, "input");
  if (!f.blend_with.empty()) job.blend_with = load_image(f.blend_with, "blend");
  job.lambda = f.lambda;
  job.taps = split_list(f.layers);
  if (job.taps.empty()) throw UsageError("--layers needs at least one layer");
  try {
    for (const auto& t : job.taps) layer_index(t);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  job.alpha_tv = f.alpha_tv;
  job.iterations = f.iters;
  job.seed = f.common.seed;
  job.lbfgs.memory = f.memory;

  const Network net = load_network(f.common.net);
  TraceWriter trace(f.common.trace_path);
  const InvertResult res = run_invert(net, job, trace.sink());
  log::info("feature energy " + std::to_string(res.initial_content) + " -> " +
            std::to_string(res.final_content));
  write_png(res.image, f.output);
  return 0;
}

struct MatchFlags {
  CommonFlags common;
  std::string a;
  std::string b;
  std::vector<std::string> coords;
  std::string layers = "relu3_1";
  int patch_size = 3;
};

int run_match_cmd(const MatchFlags& f) {
  apply_common(f.common);
  const Tensor a = load_image(f.a, "A");
  const Tensor b = load_image(f.b, "B");
  std::vector<PixelCoord> queries;
  for (const auto& c : f.coords) {
    const auto parts = split_list(c);
    try {
      if (parts.size() != 2) throw std::invalid_argument(c);
      queries.push_back({std::stoi(parts[0]), std::stoi(parts[1])});
    } catch (const std::exception&) {
      throw UsageError("--coords expects Y,X pairs, got '" + c + "'");
    }
  }
  const auto layers = split_list(f.layers);
  try {
    for (const auto& l : layers) layer_index(l);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const Network net = load_network(f.common.net);
  std::vector<MatchRow> rows;
  try {
    rows = run_match_report(net, a, b, queries, layers, f.patch_size);
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  std::printf("%-8s %7s %7s %7s %7s %9s\n", "layer", "query_y", "query_x", "match_y", "match_x",
              "ncc");
  for (const auto& r : rows) {
    std::printf("%-8s %7d %7d %7d %7d %9.6f\n", r.layer.c_str(), r.query.y, r.query.x, r.match.y,
                r.match.x, r.ncc);
  }
  return 0;
}

struct GenFlags {
  std::uint64_t seed = 42;
  double width_scale = 0.125;
  std::string output;
};

int run_gen_cmd(const GenFlags& f) {
  save_weights(make_test_network(f.seed, f.width_scale), f.output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image synthesis with neural-patch MRF priors over a fixed VGG-19 trunk"};
  app.require_subcommand(1);

  TransferFlags tf;
  auto* transfer = app.add_subcommand("transfer", "Style transfer / unguided synthesis");
  add_common_flags(transfer, tf.common);
  transfer->add_option("--style", tf.style, "Style image (PNG or JPEG)")->required();
  transfer->add_option("--content", tf.content, "Content image; sets the output size");
  transfer->add_option("-o,--output", tf.output, "Output PNG")->required();
  transfer->add_option("--alpha-content", tf.alpha_content, "Content weight (0 = unguided)")
      ->check(CLI::NonNegativeNumber);
  transfer->add_option("--alpha-tv", tf.alpha_tv, "Smoothness weight")->check(CLI::NonNegativeNumber);
  transfer->add_option("--mrf-layers", tf.mrf_layers, "Comma-separated MRF layers");
  transfer->add_option("--mrf-weights", tf.mrf_weights, "Comma-separated MRF layer weights");
  transfer->add_option("--content-layer", tf.content_layer, "Content layer");
  transfer->add_option("--patch-size", tf.patch_size, "Neural patch size")->check(CLI::PositiveNumber);
  transfer->add_option("--stride", tf.stride, "Patch stride")->check(CLI::PositiveNumber);
  transfer->add_option("--iters", tf.iters, "L-BFGS iterations per pyramid level")
      ->check(CLI::PositiveNumber);
  transfer->add_option("--min-size", tf.min_size, "Stop halving below this longest side")
      ->check(CLI::PositiveNumber);
  transfer->add_option("--memory", tf.memory, "L-BFGS history length")->check(CLI::NonNegativeNumber);
  transfer->add_option("--scales", tf.scales, "Comma-separated style scales");
  transfer->add_flag("--rotations", tf.rotations, "Add rotated style copies");
  transfer->add_option("--size", tf.size, "Output HEIGHTxWIDTH for unguided synthesis");
  transfer->add_flag("--normalize", tf.normalize, "Normalise energies by element count");

  InvertFlags inv;
  auto* invert = app.add_subcommand("invert", "Reconstruct an image from its activations");
  add_common_flags(invert, inv.common);
  invert->add_option("--image", inv.image, "Image A")->required();
  invert->add_option("--blend-with", inv.blend_with, "Image B for activation blending");
  invert->add_option("--lambda", inv.lambda, "Blend weight of A");
  invert->add_option("--layers", inv.layers, "Comma-separated tap layers");
  invert->add_option("--alpha-tv", inv.alpha_tv, "Smoothness weight")->check(CLI::NonNegativeNumber);
  invert->add_option("--iters", inv.iters, "L-BFGS iterations")->check(CLI::PositiveNumber);
  invert->add_option("--memory", inv.memory, "L-BFGS history length")->check(CLI::NonNegativeNumber);
  invert->add_option("-o,--output", inv.output, "Output PNG")->required();

  MatchFlags mf;
  auto* match = app.add_subcommand("match-report", "Best matches of query patches across layers");
  add_common_flags(match, mf.common);
  match->add_option("--a", mf.a, "Query image")->required();
  match->add_option("--b", mf.b, "Reference image")->required();
  match->add_option("--coords", mf.coords, "Query pixels as Y,X")->required();
  match->add_option("--layers", mf.layers, "Comma-separated layers");
  match->add_option("--patch-size", mf.patch_size, "Neural patch size")->check(CLI::PositiveNumber);

  GenFlags gf;
  auto* gen = app.add_subcommand("gen-test-weights", "Write a small random test network");
  gen->add_option("--seed", gf.seed, "RNG seed");
  gen->add_option("--width-scale", gf.width_scale, "Channel width scale")
      ->check(CLI::IsMember({0.125, 0.25, 0.5}));
  gen->add_option("-o,--output", gf.output, "Output weight file")->required();

  for (CLI::App* sub : {transfer, invert, match, gen}) take_last(sub);

  try {
    auto args = expand_config(argc, argv, {"rotations", "normalize", "quiet"});
    app.parse(args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*transfer) return run_transfer_cmd(tf);
    if (*invert) return run_invert_cmd(inv);
    if (*match) return run_match_cmd(mf);
    if (*gen) return run_gen_cmd(gf);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
