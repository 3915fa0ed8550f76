#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "argmaxgrad/data.hpp"
#include "argmaxgrad/dvae.hpp"
#include "argmaxgrad/estimators.hpp"
#include "argmaxgrad/experiment.hpp"
#include "argmaxgrad/gumbel.hpp"
#include "argmaxgrad/structured.hpp"

namespace py = pybind11;
using namespace argmaxgrad;

namespace {

GumbelDraw draw_from_values(const std::vector<double>& values) {
  GumbelDraw d;
  d.values = values;
  return d;
}

PairwisePotentials potentials_from_parts(
    int n, const std::vector<std::vector<double>>& unary,
    const std::vector<std::tuple<int, int, double>>& edges) {
  PairwisePotentials p = PairwisePotentials::make(n);
  for (int i = 0; i < n; ++i) {
    p.unary(i, 0) = unary.at(i).at(0);
    p.unary(i, 1) = unary.at(i).at(1);
  }
  for (const auto& [i, j, a] : edges) p.edges.push_back({i, j, a});
  p.validate();
  return p;
}

std::vector<int> bits_of(const Assignment& z) {
  return {z.bits.begin(), z.bits.end()};
}

Assignment assignment_of(const std::vector<int>& bits) {
  Assignment z;
  for (int b : bits) z.bits.push_back(static_cast<uint8_t>(b));
  return z;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Discrete latent-variable gradient estimators (C++ core)";
  m.attr("__version__") = "0.1.0";
  m.attr("EULER_GAMMA") = kEulerGamma;

  py::register_exception<Error>(m, "ArgmaxGradError");

  py::class_<PairwisePotentials>(m, "PairwisePotentials")
      .def(py::init(&potentials_from_parts), py::arg("n"), py::arg("unary"),
           py::arg("edges") = std::vector<std::tuple<int, int, double>>{})
      .def_readonly("n", &PairwisePotentials::n)
      .def("supermodular", &PairwisePotentials::supermodular)
      .def("to_json",
           [](const PairwisePotentials& p) { return p.to_json().dump(); })
      .def_static("from_json", [](const std::string& s) {
        return PairwisePotentials::from_json(nlohmann::json::parse(s));
      });

  m.def(
      "sample_gumbel",
      [](int count, uint64_t seed) {
        RngStream rng(seed);
        return sample_gumbel(count, rng).values;
      },
      py::arg("count"), py::arg("seed") = 0,
      "Zero-mean Gumbel variates from a seeded counter stream");

  m.def(
      "gumbel_max_sample",
      [](const std::vector<double>& logits, const std::vector<double>& gamma) {
        return gumbel_max_sample(logits, draw_from_values(gamma));
      },
      py::arg("logits"), py::arg("gamma"));

  m.def(
      "perturbed_argmax",
      [](const std::vector<double>& logits, const std::vector<double>& f,
         double eps, const std::vector<double>& gamma) {
        return perturbed_argmax(logits, f, eps, draw_from_values(gamma));
      },
      py::arg("logits"), py::arg("f_values"), py::arg("eps"),
      py::arg("gamma"));

  m.def(
      "gumbel_softmax_relax",
      [](const std::vector<double>& logits, const std::vector<double>& gamma,
         double tau) {
        return gumbel_softmax_relax(logits, draw_from_values(gamma), tau);
      },
      py::arg("logits"), py::arg("gamma"), py::arg("tau"));

  m.def(
      "score",
      [](const PairwisePotentials& p, const std::vector<int>& bits) {
        return score(p, assignment_of(bits));
      },
      py::arg("potentials"), py::arg("assignment"));

  m.def(
      "brute_force_map",
      [](const PairwisePotentials& p) { return bits_of(brute_force_map(p)); },
      py::arg("potentials"));

  m.def(
      "maxflow_map",
      [](const PairwisePotentials& p) { return bits_of(maxflow_map(p)); },
      py::arg("potentials"));

  m.def("exact_log_partition", &exact_log_partition, py::arg("potentials"));

  m.def(
      "structured_perturbed_argmax",
      [](const PairwisePotentials& p,
         const std::vector<std::vector<double>>& f_tilde, double eps) {
        Tensor f = Tensor::zeros({p.n, 2});
        for (int i = 0; i < p.n; ++i) {
          f(i, 0) = f_tilde.at(i).at(0);
          f(i, 1) = f_tilde.at(i).at(1);
        }
        return bits_of(structured_perturbed_argmax(p, f, eps));
      },
      py::arg("potentials"), py::arg("f_tilde"), py::arg("eps"));

  m.def(
      "direct_gradient_norm",
      [](int input_dim, int k, uint64_t seed, double eps, int draws) {
        // Smoke-level entry point: mean direct-estimator gradient norm on a
        // fresh tiny model against the exact enumeration gradient.
        RngStream rng(seed);
        DvaeModel model = DvaeModel::categorical(input_dim, 8, k, rng);
        Tensor x = Tensor::zeros({1, input_dim});
        RngStream pix = rng.substream(7);
        for (int c = 0; c < input_dim; ++c)
          x[c] = pix.next_uniform() < 0.5 ? 0.0 : 1.0;
        GradientMap acc = GradientMap::zeros_like(model.encoder);
        RngStream gum = rng.substream(8);
        for (int i = 0; i < draws; ++i) {
          const GumbelDraw gamma = sample_gumbel(k, gum);
          acc.add_scaled(
              direct_gradient(model.encoder, model.decoder, x, gamma, eps),
              1.0 / draws);
        }
        const GradientMap exact =
            unbiased_gradient(model.encoder, model.decoder, x, k);
        double dot = 0.0, na = 0.0, nb = 0.0;
        const auto a = acc.flatten(), b = exact.flatten();
        for (size_t i = 0; i < a.size(); ++i) {
          dot += a[i] * b[i];
          na += a[i] * a[i];
          nb += b[i] * b[i];
        }
        return py::make_tuple(std::sqrt(na), std::sqrt(nb),
                              dot / std::sqrt(na * nb));
      },
      py::arg("input_dim") = 6, py::arg("k") = 4, py::arg("seed") = 0,
      py::arg("eps") = 0.1, py::arg("draws") = 20000,
      "Returns (estimate_norm, exact_norm, cosine similarity)");

  m.def(
      "load_idx",
      [](const std::string& images, const std::string& labels) {
        const Dataset d = load_idx(images, labels);
        py::dict out;
        out["count"] = d.count();
        out["dim"] = d.dim();
        out["labels"] = d.labels;
        return out;
      },
      py::arg("images"), py::arg("labels") = std::string(),
      "Header/label summary of an IDX file");

  m.def(
      "run_experiment",
      [](const std::string& spec_json) {
        const ExperimentSpec spec =
            ExperimentSpec::from_json(nlohmann::json::parse(spec_json));
        const RunResult r = run(spec);
        py::dict out;
        out["final_test_loss"] = r.final_test_loss;
        out["wall_seconds"] = r.wall_seconds;
        out["summary_path"] = r.summary_path;
        if (r.has_accuracy) out["final_accuracy"] = r.final_accuracy;
        return out;
      },
      py::arg("spec_json"), "Run an experiment from its JSON spec string");

  m.def("fetch", &fetch, py::arg("dataset"), py::arg("target_dir"),
        py::arg("mirror_base") = std::string(),
        "Download a dataset's IDX files with SHA-256 verification");
}
