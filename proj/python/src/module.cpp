#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "pfedlvm/bytes.hpp"
#include "pfedlvm/commcost.hpp"
#include "pfedlvm/datagen.hpp"
#include "pfedlvm/experiment.hpp"
#include "pfedlvm/metrics.hpp"

namespace py = pybind11;
using namespace pybind11::literals;
using namespace pfedlvm;

namespace {

Tensor mask_from(const py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw ContractError("masks must be [B,H,W], got ndim " + std::to_string(a.ndim()));
  Shape shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
              static_cast<std::size_t>(a.shape(2))};
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor(std::move(shape), std::move(data));
}

py::dict summary_dict(const MetricSummary& s) {
  py::list per_class;
  for (const auto& c : s.per_class)
    per_class.append(py::dict("iou"_a = c.iou, "precision"_a = c.precision, "recall"_a = c.recall, "f1"_a = c.f1,
                              "images_counted"_a = c.images_counted));
  return py::dict("mean_iou"_a = s.mean_iou, "mean_precision"_a = s.mean_precision,
                  "mean_recall"_a = s.mean_recall, "mean_f1"_a = s.mean_f1,
                  "classes_counted"_a = s.classes_counted, "per_class"_a = per_class);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "pfedlvm simulator core";
  m.attr("__version__") = kCodeVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<CommParams>(m, "CommParams")
      .def(py::init([](std::uint64_t S_max, std::uint64_t N_b, std::uint64_t B_s, std::uint64_t F_b,
                       std::uint64_t M_b, std::uint64_t sigma, std::uint64_t V) {
             CommParams p{S_max, N_b, B_s, F_b, M_b, sigma, V};
             p.validate();
             return p;
           }),
           "S_max"_a, "N_b"_a, "B_s"_a, "F_b"_a, "M_b"_a, "sigma"_a, "V"_a)
      .def_readonly("S_max", &CommParams::S_max)
      .def_readonly("N_b", &CommParams::N_b)
      .def_readonly("B_s", &CommParams::B_s)
      .def_readonly("F_b", &CommParams::F_b)
      .def_readonly("M_b", &CommParams::M_b)
      .def_readonly("sigma", &CommParams::sigma)
      .def_readonly("V", &CommParams::V);

  m.def("m_pfl", &m_pfl, "params"_a, "Feature-exchange bytes.");
  m.def("m_fl", &m_fl, "params"_a, "Parameter-exchange bytes.");
  m.def("savings", [](const CommParams& p) {
    auto s = savings(p);
    return py::make_tuple(s.exact, s.approximate);
  }, "params"_a, "(exact, approximate) savings ratio.");

  m.def("partition_counts", &partition_counts, "total"_a, "proportions"_a);

  m.def("summarize_masks", [](py::array pred, py::array gt, std::size_t classes) {
    ConfusionAccumulator acc(classes);
    acc.accumulate_batch(mask_from(pred), mask_from(gt));
    return summary_dict(summarize(acc));
  }, "pred"_a, "gt"_a, "classes"_a);

  // key=value config text; writes outputs only when out_dir is given
  m.def("run_config", [](const std::string& text, std::optional<std::filesystem::path> out_dir) {
    std::istringstream in(text);
    RunConfig cfg = parse_run_config(in);
    cfg.out_dir = out_dir.value_or(std::filesystem::path{});
    cfg.resolve();
    RunOutcome r;
    {
      py::gil_scoped_release nogil;
      r = run_experiment(cfg);
    }
    py::list vehicles;
    for (const auto& s : r.final_eval.per_vehicle) vehicles.append(summary_dict(s));
    return py::dict("rounds"_a = r.rounds, "per_vehicle"_a = vehicles, "pooled"_a = summary_dict(r.final_eval.pooled));
  }, "text"_a, "out_dir"_a = py::none());
}
