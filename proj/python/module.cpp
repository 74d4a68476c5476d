#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sdkd/cli.hpp"
#include "sdkd/data.hpp"
#include "sdkd/energy_model.hpp"
#include "sdkd/estimators.hpp"
#include "sdkd/proposals.hpp"
#include "sdkd/soft_labels.hpp"

namespace py = pybind11;
using namespace sdkd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const Array& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

Array from_vec(const std::vector<double>& v) {
  Array out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Array from_matrix(const DenseMatrix& m) {
  Array out({static_cast<py::ssize_t>(m.rows), static_cast<py::ssize_t>(m.cols)});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

DenseMatrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-d array");
  DenseMatrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.data.begin());
  return m;
}

Dataset to_dataset(const Array& x, const std::vector<ClassId>& y, std::size_t n_classes) {
  Dataset d;
  d.inputs = to_matrix(x);
  d.labels = y;
  d.n_classes = n_classes;
  validate(d);
  return d;
}

py::dict grad_dict(const ParamGrad& g, const ModelParams& m) {
  py::dict out;
  if (!m.is_linear()) {
    const auto& h = *m.hidden_weights;
    DenseMatrix hw(h.rows, h.cols);
    hw.data = g.hidden_weights;
    out["hidden_weights"] = from_matrix(hw);
    out["hidden_bias"] = from_vec(g.hidden_bias);
  }
  // same d_repr x C convention as Model.out_weights
  DenseMatrix ow(m.num_classes(), m.repr_dim());
  ow.data = g.out_weights;
  out["out_weights"] = from_matrix(transpose(ow));
  out["out_bias"] = from_vec(g.out_bias);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "sdkd core bindings";

  // derived types not listed here map to SdkdError
  auto& base = py::register_exception<Error>(mod, "SdkdError", PyExc_ValueError);
  py::register_exception<ConfigError>(mod, "ConfigError", base.ptr());
  py::register_exception<IoError>(mod, "IoError", base.ptr());
  py::register_exception<FormatError>(mod, "FormatError", base.ptr());

  py::class_<ModelParams>(mod, "Model")
      .def_static("linear", &make_linear, py::arg("d_in"), py::arg("n_classes"))
      .def_static(
          "mlp",
          [](std::size_t d_in, std::size_t hidden, std::size_t c, bool relu) {
            return make_mlp(d_in, hidden, c, relu ? Activation::relu : Activation::identity);
          },
          py::arg("d_in"), py::arg("hidden"), py::arg("n_classes"), py::arg("relu") = true)
      .def_static("load", &load_model, py::arg("path"))
      .def("save", [](const ModelParams& m, const std::filesystem::path& p) { save_model(m, p); })
      .def(
          "init_uniform",
          [](ModelParams& m, std::uint64_t seed, std::optional<double> scale) {
            Rng rng(seed);
            init_uniform(m, rng, scale);
          },
          py::arg("seed"), py::arg("scale") = py::none())
      .def_property_readonly("n_classes", &ModelParams::num_classes)
      .def_property_readonly("input_dim", &ModelParams::input_dim)
      .def_property_readonly("is_linear", &ModelParams::is_linear)
      .def_property(
          "out_weights", [](const ModelParams& m) { return from_matrix(transpose(m.out_weights)); },
          [](ModelParams& m, const Array& a) {
            DenseMatrix w = transpose(to_matrix(a));
            if (w.rows != m.out_weights.rows || w.cols != m.out_weights.cols)
              throw ShapeError("out_weights must be d_repr x C");
            m.out_weights = std::move(w);
          })
      .def_property(
          "out_bias", [](const ModelParams& m) { return from_vec(m.out_bias); },
          [](ModelParams& m, const Array& a) {
            auto v = to_vec(a);
            if (v.size() != m.out_bias.size()) throw ShapeError("out_bias must have C entries");
            m.out_bias = std::move(v);
          })
      .def("energies", [](const ModelParams& m, const Array& x) { return from_vec(energies_full(m, to_vec(x))); })
      .def("energies_subset",
           [](const ModelParams& m, const Array& x, const std::vector<ClassId>& classes) {
             return from_vec(energies_subset(m, to_vec(x), classes));
           })
      .def("predict", [](const ModelParams& m, const Array& x) { return predict_top1(m, to_vec(x)); })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  mod.def(
      "softmax_t", [](const Array& e, double t) { return from_vec(softmax_T(to_vec(e), t)); },
      py::arg("energies"), py::arg("temperature"));

  mod.def(
      "full_distill_grad",
      [](const ModelParams& m, const Array& x, const Array& p, ClassId y, double t, double lambda) {
        return grad_dict(full_distill_grad(m, to_vec(x), to_vec(p), y, t, lambda), m);
      },
      py::arg("model"), py::arg("x"), py::arg("p"), py::arg("y"), py::arg("temperature"),
      py::arg("lambda_") = 1.0);

  mod.def(
      "is_distill_grad",
      [](const ModelParams& m, const Array& teacher_energies, const Array& x, ClassId y,
         const std::vector<ClassId>& classes, const Array& r, double t) {
        return grad_dict(is_distill_grad(m, to_vec(teacher_energies), to_vec(x), y, classes, to_vec(r), t), m);
      },
      py::arg("model"), py::arg("teacher_energies"), py::arg("x"), py::arg("y"),
      py::arg("classes"), py::arg("r"), py::arg("temperature"));

  mod.def(
      "pdbs_select",
      [](const Array& p, const Array& q, std::size_t k, ClassId y) {
        return pdbs_select(to_vec(p), to_vec(q), k, y);
      },
      py::arg("p"), py::arg("q"), py::arg("k"), py::arg("y"));

  mod.def(
      "build_mixture_pmf",
      [](std::size_t bins, double b2, double b1, double mu1, double mu2, bool percent_of_axis) {
        LaplaceMixtureConfig c;
        c.bins = bins;
        c.b1 = b1;
        c.mu1 = mu1;
        c.mu2 = mu2;
        c.b2_init = b2;
        c.b2_final = b2;
        c.scale_units = percent_of_axis ? ScaleUnits::percent_of_axis : ScaleUnits::normalized;
        return from_vec(build_mixture_pmf(c, b2).pmf);
      },
      py::arg("bins"), py::arg("b2"), py::arg("b1") = 3.0, py::arg("mu1") = 0.0,
      py::arg("mu2") = 1.0, py::arg("percent_of_axis") = true);

  py::class_<AliasTable>(mod, "AliasTable")
      .def(py::init([](const Array& pmf) { return build_alias(std::span<const double>(to_vec(pmf))); }))
      .def("__len__", &AliasTable::size)
      .def("pmf", [](const AliasTable& t) { return from_vec(t.reconstruct()); })
      .def(
          "sample",
          [](const AliasTable& t, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            const auto idx = sample_indices(t, n, rng);
            py::array_t<std::uint32_t> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(idx.size())});
            std::copy(idx.begin(), idx.end(), out.mutable_data());
            return out;
          },
          py::arg("n"), py::arg("seed") = 0);

  mod.def(
      "gen_blobs",
      [](std::size_t n_classes, std::size_t samples_per_class, std::size_t dim, double center_scale,
         double noise_sigma, std::uint64_t seed) {
        BlobsConfig c{n_classes, samples_per_class, dim, center_scale, noise_sigma, seed};
        const SplitDataset d = gen_blobs(c);
        py::dict out;
        out["x_train"] = from_matrix(d.train.inputs);
        out["y_train"] = d.train.labels;
        out["x_test"] = from_matrix(d.test.inputs);
        out["y_test"] = d.test.labels;
        out["centers"] = from_matrix(d.centers);
        return out;
      },
      py::arg("n_classes") = 100, py::arg("samples_per_class") = 100, py::arg("dim") = 32,
      py::arg("center_scale") = 3.0, py::arg("noise_sigma") = 1.0, py::arg("seed") = 0);

  mod.def(
      "relabel",
      [](const ModelParams& teacher, const Array& x, double t) {
        Dataset d = to_dataset(x, std::vector<ClassId>(static_cast<std::size_t>(x.shape(0)), 0),
                               teacher.num_classes());
        return from_matrix(relabel_dataset(teacher, d, t).probs);
      },
      py::arg("teacher"), py::arg("x"), py::arg("temperature"));

  mod.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int rc;
        {
          py::gil_scoped_release release;
          rc = cli_main(args, out, err);
        }
        return py::make_tuple(rc, out.str(), err.str());
      },
      py::arg("args"), "Runs the sdkd command line; returns (exit_code, stdout, stderr).");
}
