#include <pybind11/complex.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "musc/channel.hpp"
#include "musc/classical.hpp"
#include "musc/errors.hpp"
#include "musc/harness.hpp"

namespace py = pybind11;
using namespace musc;
using namespace musc::harness;

namespace {

Config make_config(const std::map<std::string, std::string>& overrides) {
  Config c;
  for (const auto& [k, v] : overrides) c.set(k, v);
  return c;
}

}  // namespace

PYBIND11_MODULE(_musc, m) {
  m.doc() = "Multi-user semantic communication simulator";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "config_hash", [](const std::map<std::string, std::string>& overrides) { return make_config(overrides).hash(); },
      py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("config_defaults", [] {
    std::map<std::string, std::string> d;
    for (const auto& [k, v] : Config::schema()) d[k] = v;
    return d;
  });

  m.def(
      "cost_report",
      [](const std::string& scale, std::size_t samples, std::uint64_t seed) {
        const auto tc = transceiver::config_for_scale(scale);
        auto r = count_symbols_and_ops(tc);
        measure_traditional(r, tc, samples, 75, seed);
        return cost_report_json(r, {{"tool_version", kToolVersion}, {"seed", seed}}).dump();
      },
      py::arg("scale") = "toy", py::arg("samples") = 0, py::arg("seed") = 1,
      "Cost report as a JSON string.");

  m.def(
      "generate_dataset",
      [](const std::filesystem::path& out, const std::map<std::string, std::string>& overrides) {
        const auto cfg = make_config(overrides);
        const auto dc = dataset_config(cfg);
        const auto ds = data::generate_dataset(dc);
        data::save_dataset(out, ds, kToolVersion);
        return data::dataset_config_hash(dc);
      },
      py::arg("out"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Writes a dataset directory; returns the dataset hash.");

  m.def(
      "parse_results",
      [](const std::string& text) {
        std::string hash;
        const auto records = parse_records_csv(text, &hash);
        py::list rows;
        for (const auto& r : records) {
          py::dict d;
          d["method"] = r.method;
          d["channel"] = r.channel;
          d["snr_db"] = r.snr_db;
          d["accuracy"] = r.failed ? py::object(py::float_(NAN)) : py::object(py::float_(r.accuracy()));
          d["n"] = r.n;
          d["seed"] = r.seed;
          rows.append(d);
        }
        return py::make_tuple(hash, rows);
      },
      py::arg("text"), "Parses a results CSV into (config_hash, rows).");

  m.def("snr_to_noise_variance", &channel::snr_to_noise_variance, py::arg("snr_db"));
  m.def("qam16_constellation", &classical::qam16_constellation);
  m.def(
      "huffman_lengths",
      [](const std::vector<double>& freq) { return classical::HuffmanCode::from_frequencies(freq).lengths(); },
      py::arg("frequencies"));
}
