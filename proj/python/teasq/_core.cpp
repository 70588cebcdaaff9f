// Python bindings for the core library. JSON crosses the boundary as text.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "teasq/aggregation.hpp"
#include "teasq/compression.hpp"
#include "teasq/errors.hpp"
#include "teasq/latency.hpp"
#include "teasq/runner.hpp"

namespace py = pybind11;
using Overrides = std::vector<std::pair<std::string, std::string>>;

namespace {

teasq::ParamVector flat(const std::vector<float>& v) {
  teasq::ParamVector w;
  w.tensors.push_back({"w", {v.size()}, v});
  return w;
}

std::optional<std::filesystem::path> maybe(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "teasq simulator core";

  static py::exception<teasq::ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  static py::exception<teasq::FormatError> format_error(m, "FormatError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const teasq::ConfigError& e) {
      config_error(e.what());
    } catch (const teasq::FormatError& e) {
      format_error(e.what());
    }
  });

  m.def("staleness_weight", py::overload_cast<double, double>(&teasq::staleness_weight),
        py::arg("staleness"), py::arg("a"));
  m.def("topk_count", &teasq::topk_count, py::arg("n"), py::arg("p_s"));

  m.def(
      "round_trip",
      [](const std::vector<float>& values, double p_s, int p_q, std::uint64_t seed) {
        const auto w = flat(values);
        const auto u = teasq::compress(w, {p_s, p_q}, seed);
        const auto back = teasq::decompress(u, teasq::layout_of(w));
        return py::make_tuple(back.tensors[0].values, u.bit_size);
      },
      py::arg("values"), py::arg("p_s"), py::arg("p_q"), py::arg("seed") = 0,
      "Compress and decompress one flat tensor; returns (values, bit_size).");

  m.def(
      "encode",
      [](const std::vector<float>& values, double p_s, int p_q, std::uint64_t seed) {
        const auto bytes = teasq::encode_tensors(teasq::compress(flat(values), {p_s, p_q}, seed));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("values"), py::arg("p_s"), py::arg("p_q"), py::arg("seed") = 0);

  m.def(
      "transmission_rate",
      [](double distance_m, bool uplink) {
        return teasq::transmission_rate(distance_m, uplink ? teasq::Direction::kUp : teasq::Direction::kDown,
                                        teasq::ChannelConfig{});
      },
      py::arg("distance_m"), py::arg("uplink") = true);

  m.def(
      "resolve_config",
      [](const std::string& path, const Overrides& overrides) {
        return teasq::to_json(teasq::load_run_input(maybe(path), overrides).config).dump();
      },
      py::arg("path") = "", py::arg("overrides") = Overrides{});

  m.def(
      "run",
      [](const std::string& path, const Overrides& overrides, const std::string& out_dir) {
        auto input = teasq::load_run_input(maybe(path), overrides);
        py::gil_scoped_release release;
        return teasq::run_to_directory(input, out_dir).summary.dump();
      },
      py::arg("path"), py::arg("overrides"), py::arg("out_dir"),
      "Run one experiment into out_dir; returns summary.json text.");

  m.def(
      "tune",
      [](const std::string& path, const Overrides& overrides, const std::string& out_dir) {
        auto input = teasq::load_run_input(maybe(path), overrides);
        py::gil_scoped_release release;
        return teasq::tune_to_directory(input.config, out_dir).dump();
      },
      py::arg("path"), py::arg("overrides"), py::arg("out_dir"));
}
