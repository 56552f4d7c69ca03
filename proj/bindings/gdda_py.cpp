// Python bindings for the main operations. Configs cross the boundary as
// JSON text; the gdda package wraps these raw entry points with dict-based
// conveniences.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "gdda/pipeline.hpp"

namespace py = pybind11;
using namespace gdda;
using nlohmann::json;

namespace {

ExperimentConfig config_from_text(const std::string& text) {
  json raw = json::parse(text, nullptr, false);
  if (raw.is_discarded()) throw ConfigError("config is not valid JSON");
  return parse_experiment_config(raw);
}

ScoredSet scored_set(const std::vector<double>& ind,
                     const std::vector<double>& ood) {
  ScoredSet ss;
  ss.ind_scores = ind;
  ss.ood_scores = ood;
  ss.ind_correct.assign(ind.size(), true);
  return ss;
}

std::string run_pipeline_json(const std::string& config_text,
                              const std::string& stage_cache, bool baseline) {
  ExperimentConfig cfg = config_from_text(config_text);
  StageCache cache =
      stage_cache.empty() ? StageCache() : StageCache(stage_cache);
  auto metrics_path = run_pipeline(cfg, cache, baseline);
  std::ifstream in(metrics_path);
  json m = json::parse(in);
  return m.dump();
}

std::string run_seeds_json(const std::string& config_text,
                           const std::string& stage_cache, bool baseline) {
  ExperimentConfig cfg = config_from_text(config_text);
  StageCache cache =
      stage_cache.empty() ? StageCache() : StageCache(stage_cache);
  return run_seeds(cfg, cache, baseline).dump();
}

std::string lambda_sweep_json(const std::string& config_text,
                              const std::vector<double>& lambdas,
                              const std::string& stage_cache) {
  ExperimentConfig cfg = config_from_text(config_text);
  StageCache cache =
      stage_cache.empty() ? StageCache() : StageCache(stage_cache);
  json rows = json::array();
  for (const SweepRow& r : run_lambda_sweep(cfg, cache, lambdas))
    rows.push_back({{"lambda", r.lambda},
                    {"mean_distance_c", r.mean_distance_c},
                    {"mean_distance_s", r.mean_distance_s}});
  return rows.dump();
}

std::string generate_dataset_json(const std::string& config_text,
                                  const std::string& path) {
  ExperimentConfig cfg = config_from_text(config_text);
  DatasetSplit split = generate_benchmark(resolved_benchmark(cfg));
  save_dataset(split, path);
  json counts = {{"train", split.train.size()},
                 {"test_ind", split.test_ind.size()},
                 {"test_ood", split.test_ood.size()}};
  return counts.dump();
}

std::string config_hash_of(const std::string& config_text) {
  return config_from_text(config_text).config_hash;
}

double energy_of(const std::vector<double>& logits, double temperature) {
  Eigen::RowVectorXd z(static_cast<Eigen::Index>(logits.size()));
  for (size_t i = 0; i < logits.size(); ++i)
    z(static_cast<Eigen::Index>(i)) = logits[i];
  return energy(z, temperature);
}

std::pair<double, double> alpha_sigma(double beta_min, double beta_max,
                                      double horizon, double t) {
  DiffusionSchedule sched;
  sched.beta_min = beta_min;
  sched.beta_max = beta_max;
  sched.T = horizon;
  sched.validate();
  return {sched.alpha(t), sched.sigma(t)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Graph semantic-OOD detection core (C++)";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const MissingArtifactError& e) {
      PyErr_SetString(PyExc_FileNotFoundError, e.what());
    } catch (const NumericError& e) {
      PyErr_SetString(PyExc_ArithmeticError, e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const UsageError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });

  m.def("run_pipeline_json", &run_pipeline_json, py::arg("config"),
        py::arg("stage_cache") = "", py::arg("baseline") = false,
        py::call_guard<py::gil_scoped_release>(),
        "Run the two-phase pipeline for one seed; returns the metrics "
        "report as JSON text.");
  m.def("run_seeds_json", &run_seeds_json, py::arg("config"),
        py::arg("stage_cache") = "", py::arg("baseline") = false,
        py::call_guard<py::gil_scoped_release>(),
        "Run the pipeline across the configured seeds; returns the "
        "aggregate (or single-seed metrics) as JSON text.");
  m.def("lambda_sweep_json", &lambda_sweep_json, py::arg("config"),
        py::arg("lambdas"), py::arg("stage_cache") = "",
        py::call_guard<py::gil_scoped_release>(),
        "Sample factors at each lambda; returns centroid-distance rows as "
        "JSON text.");
  m.def("generate_dataset_json", &generate_dataset_json, py::arg("config"),
        py::arg("path"), py::call_guard<py::gil_scoped_release>(),
        "Generate the synthetic benchmark to a JSONL file; returns split "
        "counts as JSON text.");
  m.def("config_hash", &config_hash_of, py::arg("config"),
        "Content hash of the resolved configuration (seed-independent).");
  m.def("auroc",
        [](const std::vector<double>& ind, const std::vector<double>& ood) {
          return auroc(scored_set(ind, ood));
        },
        py::arg("ind_scores"), py::arg("ood_scores"));
  m.def("aupr",
        [](const std::vector<double>& ind, const std::vector<double>& ood) {
          return aupr(scored_set(ind, ood));
        },
        py::arg("ind_scores"), py::arg("ood_scores"));
  m.def("fpr_at_95tpr",
        [](const std::vector<double>& ind, const std::vector<double>& ood) {
          return fpr_at_95tpr(scored_set(ind, ood));
        },
        py::arg("ind_scores"), py::arg("ood_scores"));
  m.def("ind_accuracy",
        [](const std::vector<bool>& correct) {
          ScoredSet ss;
          ss.ind_correct = correct;
          return ind_accuracy(ss);
        },
        py::arg("correct"));
  m.def("energy", &energy_of, py::arg("logits"), py::arg("temperature") = 1.0,
        "Energy score -T logsumexp(logits / T).");
  m.def("alpha_sigma", &alpha_sigma, py::arg("beta_min") = 0.1,
        py::arg("beta_max") = 20.0, py::arg("horizon") = 1.0, py::arg("t") = 0.0,
        "Closed-form VP-SDE marginal coefficients (alpha(t), sigma(t)).");
}
