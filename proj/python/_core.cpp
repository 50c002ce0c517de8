#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

#include "oodattack/attack.hpp"
#include "oodattack/checkpoint.hpp"
#include "oodattack/errors.hpp"
#include "oodattack/harness.hpp"
#include "oodattack/metrics.hpp"

namespace py = pybind11;
using namespace oodattack;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 1 && a.ndim() != 2) throw DimensionError("expected a 1-D or 2-D array");
  Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict row_dict(const UncertaintyReport& r) {
  py::dict d;
  d["model"] = r.model;
  d["dataset"] = r.dataset;
  d["epsilon"] = r.epsilon;
  d["iters"] = r.iterations;
  d["tau"] = r.tau;
  d["H_clean"] = r.entropy_clean;
  d["H_adv"] = r.entropy_adv;
  d["R_clean"] = r.rejection_clean;
  d["R_adv"] = r.rejection_adv;
  return d;
}

py::list table_rows(const ReportTable& t) {
  py::list out;
  for (const auto& r : t.rows) out.append(row_dict(r));
  return out;
}

// A loaded or freshly trained victim held by Python.
class Model {
 public:
  explicit Model(std::unique_ptr<UncertaintyModel> m) : m_(std::move(m)) {}

  std::string family() const { return std::string(family_name(m_->family())); }
  std::size_t input_dim() const { return m_->input_dim(); }
  std::size_t num_classes() const { return m_->num_classes(); }
  Array predict(const Array& x) const { return to_array(m_->predict_confidence(to_tensor(x))); }

  Array attack(const Array& x, double epsilon, std::size_t iters, std::optional<double> step_size, double lo,
               double hi) const {
    AttackConfig cfg{epsilon, iters, step_size, {lo, hi}};
    const Tensor t = to_tensor(x);
    if (t.rank() == 1) return to_array(perturb(*m_, t, cfg).adversarial);
    std::vector<Tensor> rows;
    for (auto& r : perturb_batch(*m_, t, cfg)) rows.push_back(std::move(r.adversarial));
    return to_array(stack_rows(rows));
  }

  void save(const std::string& path) { save_checkpoint(*m_, path); }

 private:
  std::unique_ptr<UncertaintyModel> m_;
};

ExperimentConfig config_of(const std::optional<std::string>& text) { return parse_config(text.value_or("{}")); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Out-domain adversarial attacks on uncertainty estimators";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  m.def("default_config", [] { return config_to_json(parse_config("{}")); },
        "Canonical JSON of the default experiment");
  m.def("normalize_config", [](const std::string& text) { return config_to_json(parse_config(text)); },
        py::arg("config_json"));

  m.def("entropy", [](const Array& p) { return entropy(to_tensor(p)); }, py::arg("probs"),
        "Mean Shannon entropy in nats of a batch of distributions");
  m.def("rejection_rate", [](const Array& p, double tau) { return rejection_rate(to_tensor(p), MetricsConfig{tau}); },
        py::arg("probs"), py::arg("tau") = 0.9);
  m.def("project_linf",
        [](const Array& candidate, const Array& origin, double epsilon, double lo, double hi) {
          return to_array(project_linf(to_tensor(candidate), to_tensor(origin), epsilon, {lo, hi}));
        },
        py::arg("candidate"), py::arg("origin"), py::arg("epsilon"), py::arg("lo"), py::arg("hi"));

  m.def("benchmark",
        [](std::optional<std::string> config) {
          const Benchmark b = load_benchmark(config_of(config));
          std::vector<std::size_t> ytr = b.train.labels, yte = b.test.labels;
          return py::dict(py::arg("name") = b.name, py::arg("x_train") = to_array(b.train.features),
                          py::arg("y_train") = ytr, py::arg("x_test") = to_array(b.test.features),
                          py::arg("y_test") = yte, py::arg("x_out") = to_array(b.out.features),
                          py::arg("range") = py::make_tuple(b.out.range.lo, b.out.range.hi));
        },
        py::arg("config_json") = py::none());

  py::class_<Model>(m, "Model")
      .def_property_readonly("family", &Model::family)
      .def_property_readonly("input_dim", &Model::input_dim)
      .def_property_readonly("num_classes", &Model::num_classes)
      .def("predict", &Model::predict, py::arg("x"))
      .def("attack", &Model::attack, py::arg("x"), py::arg("epsilon"), py::arg("iters") = 10,
           py::arg("step_size") = py::none(), py::arg("lo") = -4.0, py::arg("hi") = 4.0)
      .def("save", &Model::save, py::arg("path"));

  m.def("load_model", [](const std::string& path) { return Model(load_checkpoint(path)); }, py::arg("path"));
  m.def("train_model",
        [](const std::string& victim, std::optional<std::string> config) {
          const ExperimentConfig c = config_of(config);
          py::gil_scoped_release release;
          const Benchmark b = load_benchmark(c);
          return Model(train_victim(c, victim, b.train));
        },
        py::arg("victim"), py::arg("config_json") = py::none());

  m.def("run_experiment",
        [](const std::string& config) {
          const ExperimentConfig c = parse_config(config);
          ReportTable t;
          {
            py::gil_scoped_release release;
            t = run_experiment(c);
          }
          return table_rows(t);
        },
        py::arg("config_json"), "Attack every victim, write outputs and return the report rows");
  m.def("sweep_epsilon",
        [](const std::string& config) {
          const ExperimentConfig c = parse_config(config);
          ReportTable t;
          {
            py::gil_scoped_release release;
            t = sweep_epsilon(c);
          }
          py::dict out;
          out["rows"] = table_rows(t);
          out["non_monotone"] = t.non_monotone;
          return out;
        },
        py::arg("config_json"));
  m.def("read_report", [](const std::string& path) { return table_rows(read_report_csv(path)); }, py::arg("path"));
}
