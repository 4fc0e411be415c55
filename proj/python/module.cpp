#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neuralmrf/error.hpp"
#include "neuralmrf/image_io.hpp"
#include "neuralmrf/log.hpp"
#include "neuralmrf/mrf.hpp"
#include "neuralmrf/objective.hpp"
#include "neuralmrf/ops.hpp"
#include "neuralmrf/synthesis.hpp"
#include "neuralmrf/vgg.hpp"

namespace py = pybind11;
using namespace nmrf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  if (a.ndim() != 3) throw ConfigError("expected a (channels, height, width) array");
  const Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                static_cast<int>(a.shape(2))};
  return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  FloatArray a({t.channels(), t.height(), t.width()});
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

std::optional<Tensor> optional_tensor(const std::optional<FloatArray>& a) {
  if (!a) return std::nullopt;
  return to_tensor(*a);
}

FloatArray matrix(std::span<const float> data, std::size_t rows, std::size_t cols) {
  FloatArray a({rows, cols});
  std::copy(data.begin(), data.end(), a.mutable_data());
  return a;
}

PatchBank bank_from_matrix(const FloatArray& patches, int k, int channels) {
  if (patches.ndim() != 2 || patches.shape(1) != static_cast<py::ssize_t>(k) * k * channels) {
    throw ConfigError("patch matrix must have shape (n, channels * k * k)");
  }
  PatchBank b;
  b.k = k;
  b.channels = channels;
  b.patches.assign(patches.data(), patches.data() + patches.size());
  for (py::ssize_t i = 0; i < patches.shape(0); ++i) {
    double s = 0.0;
    for (float v : b.patch(i)) s += static_cast<double>(v) * v;
    b.norms.push_back(static_cast<float>(std::sqrt(s)));
    b.origins.push_back({0, 0, static_cast<int>(i)});
  }
  return b;
}

py::dict trace_dict(const TraceRecord& r) {
  py::dict d;
  d["level"] = r.level;
  d["iter"] = r.iteration;
  d["total"] = r.total;
  d["style"] = r.style;
  d["content"] = r.content;
  d["tv"] = r.tv;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Neural-patch MRF image synthesis over a fixed VGG-19 trunk";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<LoadError>(m, "LoadError", base.ptr());
  py::register_exception<InputError>(m, "InputError", base.ptr());
  py::register_exception<OptimizationError>(m, "OptimizationError", base.ptr());

  m.def("set_num_threads", &set_num_threads, py::arg("n"));
  m.def("set_log_level", [](const std::string& level) {
    if (level == "quiet") nmrf::log::set_level(nmrf::log::Level::kQuiet);
    else if (level == "warn") nmrf::log::set_level(nmrf::log::Level::kWarn);
    else if (level == "info") nmrf::log::set_level(nmrf::log::Level::kInfo);
    else if (level == "debug") nmrf::log::set_level(nmrf::log::Level::kDebug);
    else throw ConfigError("log level must be quiet, warn, info or debug");
  });

  py::class_<Network>(m, "Network")
      .def_readonly("width_divisor", &Network::width_divisor)
      .def("channels_at", &Network::channels_at, py::arg("layer"))
      .def("conv_shapes", [](const Network& n) {
        std::vector<std::tuple<int, int, int, int>> out;
        for (const auto& c : n.convs) out.emplace_back(c.out_channels, c.in_channels, 3, 3);
        return out;
      });

  m.def("make_test_network", &make_test_network, py::arg("seed"), py::arg("width_scale") = 0.125);
  m.def("load_weights", [](const std::filesystem::path& p) { return load_weights(p); },
        py::arg("path"));
  m.def("save_weights", [](const Network& n, const std::filesystem::path& p) { save_weights(n, p); },
        py::arg("net"), py::arg("path"));
  m.def("layer_stride", &layer_stride, py::arg("layer"));

  m.def(
      "forward",
      [](const Network& net, const FloatArray& image, const std::vector<std::string>& taps) {
        const Tensor img = to_tensor(image);
        LayerActivations act;
        {
          py::gil_scoped_release release;
          act = forward_tapped(net, img, taps, /*cache=*/false);
        }
        py::dict out;
        for (const auto& t : taps) out[py::str(t)] = to_array(act.at(t));
        return out;
      },
      py::arg("net"), py::arg("image"), py::arg("taps"),
      "Activations of an RGB [0, 255] image at the named layers.");

  m.def(
      "extract_patches",
      [](const FloatArray& feature, int k, int stride) {
        const PatchBank b = extract_patches(to_tensor(feature), k, stride);
        std::vector<std::tuple<int, int>> origins;
        for (const auto& o : b.origins) origins.emplace_back(o.y, o.x);
        return py::make_tuple(matrix(b.patches, b.count(), b.dim()),
                              matrix(b.norms, b.count(), 1).attr("ravel")(), origins);
      },
      py::arg("feature"), py::arg("k") = 3, py::arg("stride") = 1,
      "(patches, norms, origins) of every k x k window in scan order.");

  m.def(
      "match_patches",
      [](const FloatArray& query, const FloatArray& style, int k, int channels) {
        const PatchBank q = bank_from_matrix(query, k, channels);
        const PatchBank s = bank_from_matrix(style, k, channels);
        MatchResult r;
        {
          py::gil_scoped_release release;
          r = match_patches_scored(q, s);
        }
        return py::make_tuple(r.index, r.ncc);
      },
      py::arg("query"), py::arg("style"), py::arg("k"), py::arg("channels"),
      "NCC argmax per query row; returns (indices, scores).");

  py::class_<EnergyConfig>(m, "EnergyConfig")
      .def(py::init<>())
      .def_readwrite("alpha_content", &EnergyConfig::alpha_content)
      .def_readwrite("alpha_tv", &EnergyConfig::alpha_tv)
      .def_readwrite("mrf_layers", &EnergyConfig::mrf_layers)
      .def_readwrite("mrf_layer_weights", &EnergyConfig::mrf_layer_weights)
      .def_readwrite("content_layer", &EnergyConfig::content_layer)
      .def_readwrite("patch_size", &EnergyConfig::patch_size)
      .def_readwrite("stride", &EnergyConfig::stride)
      .def_readwrite("normalize", &EnergyConfig::normalize)
      .def_property(
          "scales", [](const EnergyConfig& c) { return c.augmentation.scales; },
          [](EnergyConfig& c, std::vector<double> v) { c.augmentation.scales = std::move(v); })
      .def_property(
          "rotations", [](const EnergyConfig& c) { return c.augmentation.rotations; },
          [](EnergyConfig& c, std::vector<double> v) { c.augmentation.rotations = std::move(v); })
      .def_property(
          "enable_rotations", [](const EnergyConfig& c) { return c.augmentation.enable_rotations; },
          [](EnergyConfig& c, bool v) { c.augmentation.enable_rotations = v; })
      .def("validate", &EnergyConfig::validate);

  m.def(
      "pyramid_schedule",
      [](int h, int w, int iterations, int min_size) {
        std::vector<std::tuple<int, int, int>> out;
        for (const auto& l : pyramid_schedule(h, w, iterations, min_size)) {
          out.emplace_back(l.height, l.width, l.iterations);
        }
        return out;
      },
      py::arg("height"), py::arg("width"), py::arg("iterations") = 200, py::arg("min_size") = 64);

  m.def(
      "transfer",
      [](const Network& net, const FloatArray& style, const std::optional<FloatArray>& content,
         const EnergyConfig& config, std::uint64_t seed, int iterations_per_level, int min_size,
         std::optional<std::tuple<int, int>> size, int memory) {
        SynthesisJob job;
        job.style = to_tensor(style);
        job.content = optional_tensor(content);
        job.config = config;
        job.seed = seed;
        job.iterations_per_level = iterations_per_level;
        job.min_size = min_size;
        job.lbfgs.memory = memory;
        if (size) std::tie(job.out_height, job.out_width) = *size;
        std::vector<TraceRecord> records;
        TransferResult r;
        {
          py::gil_scoped_release release;
          r = run_transfer(net, job, [&](const TraceRecord& t) { records.push_back(t); });
        }
        py::list trace;
        for (const auto& t : records) trace.append(trace_dict(t));
        return py::make_tuple(to_array(r.image), trace);
      },
      py::arg("net"), py::arg("style"), py::arg("content") = py::none(),
      py::arg("config") = EnergyConfig{}, py::arg("seed") = 0,
      py::arg("iterations_per_level") = 200, py::arg("min_size") = 64,
      py::arg("size") = py::none(), py::arg("memory") = 10,
      "Coarse-to-fine synthesis; returns (image, trace records).");

  m.def(
      "invert",
      [](const Network& net, const FloatArray& image, const std::vector<std::string>& taps,
         double alpha_tv, int iterations, std::uint64_t seed,
         const std::optional<FloatArray>& blend_with, double lambda_) {
        InvertJob job;
        job.image = to_tensor(image);
        job.taps = taps;
        job.alpha_tv = alpha_tv;
        job.iterations = iterations;
        job.seed = seed;
        job.blend_with = optional_tensor(blend_with);
        job.lambda = lambda_;
        InvertResult r;
        {
          py::gil_scoped_release release;
          r = run_invert(net, job);
        }
        return py::make_tuple(to_array(r.image), r.initial_content, r.final_content);
      },
      py::arg("net"), py::arg("image"), py::arg("taps") = std::vector<std::string>{"relu4_1"},
      py::arg("alpha_tv") = 0.001, py::arg("iterations") = 200, py::arg("seed") = 0,
      py::arg("blend_with") = py::none(), py::arg("lam") = 1.0,
      "Image whose activations match the target; returns (image, initial, final) energies.");

  m.def(
      "match_report",
      [](const Network& net, const FloatArray& a, const FloatArray& b,
         const std::vector<std::tuple<int, int>>& coords, const std::vector<std::string>& layers,
         int k) {
        std::vector<PixelCoord> queries;
        for (const auto& [y, x] : coords) queries.push_back({y, x});
        const Tensor ta = to_tensor(a);
        const Tensor tb = to_tensor(b);
        std::vector<MatchRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_match_report(net, ta, tb, queries, layers, k);
        }
        std::vector<std::tuple<std::string, int, int, int, int, float>> out;
        for (const auto& r : rows) {
          out.emplace_back(r.layer, r.query.y, r.query.x, r.match.y, r.match.x, r.ncc);
        }
        return out;
      },
      py::arg("net"), py::arg("a"), py::arg("b"), py::arg("coords"),
      py::arg("layers") = std::vector<std::string>{"relu3_1"}, py::arg("k") = 3,
      "Rows of (layer, query_y, query_x, match_y, match_x, ncc).");

  m.def("read_image", [](const std::filesystem::path& p) { return to_array(read_image(p)); },
        py::arg("path"));
  m.def("write_png",
        [](const FloatArray& img, const std::filesystem::path& p) { write_png(to_tensor(img), p); },
        py::arg("image"), py::arg("path"));
}
