#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdda/dataset.hpp"
#include "gdda/detector.hpp"
#include "gdda/diffusion.hpp"
#include "gdda/disentangler.hpp"
#include "gdda/metrics.hpp"

namespace gdda {

// Fully-resolved experiment settings. Parsed from a single JSON file with
// every field defaulted; unknown keys are rejected so typos fail loudly.
struct ExperimentConfig {
  uint64_t seed = 1;
  std::vector<uint64_t> seeds;  // multi-seed aggregation ([] = just `seed`)
  std::string output_dir = "out";
  std::string ablation = "none";  // none | no_pseudo_ind | no_pseudo_ood

  // benchmark (style vectors resolved per seed unless given explicitly)
  std::vector<int> known_classes{0, 1, 2};
  std::vector<int> unknown_classes{3};
  std::vector<int> train_domains{0, 1};
  std::vector<int> test_domains{2};
  int graphs_per_cell = 60;
  int nodes_min = 6;
  int nodes_max = 10;
  int d_in = 8;
  double style_scale = 1.5;
  std::vector<Eigen::VectorXd> style_vectors;  // empty = auto-generated
  double noise_scale = 0.3;

  GinConfig gin;
  DisentanglerConfig dis;
  Phase1TrainOptions phase1;
  DiffusionSchedule schedule;
  ScoreNetConfig score;
  ScoreTrainOptions score_train;

  double lambda_c = 0.4;
  double lambda_s = 0.4;
  int pseudo_count = 0;  // 0 = one pseudo rep per training graph

  EnergyConfig energy;
  int head_hidden = 32;
  int detector_epochs = 300;
  double detector_lr = 1e-3;
  bool train_backbone = false;

  // canonical resolved settings (seed/seeds/output_dir excluded) + its hash
  nlohmann::json canonical;
  std::string config_hash;

  MlpSpec head_spec() const;
  int num_known() const { return static_cast<int>(known_classes.size()); }
  // known class id -> head logit index (ascending id order)
  int class_index(int label) const;
};

ExperimentConfig parse_experiment_config(const nlohmann::json& raw);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// The benchmark for one run: style vectors filled in (seed-derived when not
// explicit) and the data seed derived from the run seed.
BenchmarkSpec resolved_benchmark(const ExperimentConfig& cfg);

// Artifact locations under one run's output directory.
struct RunPaths {
  std::filesystem::path out;

  std::filesystem::path dataset() const { return out / "dataset.jsonl"; }
  std::string phase1_stem() const { return (out / "phase1").string(); }
  std::filesystem::path phase1_log() const { return out / "phase1_log.csv"; }
  std::string score_stem() const { return (out / "score").string(); }
  std::filesystem::path score_log() const { return out / "score_log.csv"; }
  std::filesystem::path pseudo() const { return out / "pseudo.jsonl"; }
  std::string detector_stem() const { return (out / "detector").string(); }
  std::filesystem::path detector_log() const {
    return out / "detector_log.csv";
  }
  std::filesystem::path metrics() const { return out / "metrics.json"; }
  std::filesystem::path projection() const { return out / "projection.csv"; }
  std::filesystem::path manifest() const { return out / "manifest.json"; }
  std::filesystem::path sweep() const { return out / "sweep.csv"; }
  std::filesystem::path sweep_projection(size_t row) const {
    return out / ("projection_sweep_" + std::to_string(row) + ".csv");
  }
};

// Content-addressed reuse of stage outputs across runs (sweeps, ablations,
// baselines). Keys hash the stage name, the config subset feeding the stage,
// the seed, and the upstream keys; entries are finalized atomically.
class StageCache {
 public:
  StageCache() = default;  // disabled
  explicit StageCache(std::filesystem::path dir);

  bool enabled() const { return !dir_.empty(); }
  bool restore(const std::string& key, const std::vector<std::string>& files,
               const std::filesystem::path& dst_dir) const;
  void store(const std::string& key, const std::vector<std::string>& files,
             const std::filesystem::path& src_dir) const;

 private:
  std::filesystem::path dir_;
};

// Stage keys, computable from config alone.
std::string data_key(const ExperimentConfig& cfg);
std::string phase1_key(const ExperimentConfig& cfg);
std::string score_key(const ExperimentConfig& cfg);
std::string pseudo_key(const ExperimentConfig& cfg);
std::string detector_key(const ExperimentConfig& cfg, bool baseline);

// Stages. Each reads its inputs from `paths.out` (missing input -> missing
// artifact error), writes its outputs there, and registers them in `cache`.
void stage_data(const ExperimentConfig& cfg, const RunPaths& paths,
                const StageCache& cache);
void stage_phase1(const ExperimentConfig& cfg, const RunPaths& paths,
                  const StageCache& cache);
void stage_score(const ExperimentConfig& cfg, const RunPaths& paths,
                 const StageCache& cache);
void stage_pseudo(const ExperimentConfig& cfg, const RunPaths& paths,
                  const StageCache& cache);
void stage_detector(const ExperimentConfig& cfg, const RunPaths& paths,
                    const StageCache& cache, bool baseline);
nlohmann::json stage_eval(const ExperimentConfig& cfg, const RunPaths& paths,
                          bool baseline);

// Full pipeline for one seed; returns the metrics report path. `baseline`
// trains with both pseudo pools empty (the plain energy detector).
std::filesystem::path run_pipeline(const ExperimentConfig& cfg,
                                   const StageCache& cache,
                                   bool baseline = false);

struct SweepRow {
  double lambda = 0.0;
  double mean_distance_c = 0.0;
  double mean_distance_s = 0.0;
};

// Factor sampling at each lambda (applied to both factors), reporting mean
// distances to the training-factor centroids; emits sweep.csv plus one
// projection CSV per row.
std::vector<SweepRow> run_lambda_sweep(const ExperimentConfig& cfg,
                                       const StageCache& cache,
                                       const std::vector<double>& lambdas);

// Multi-seed driver: runs the pipeline once per seed (seed list from the
// config seeds field, else the single seed) into per-seed subdirectories and
// writes an aggregate report (mean and sample std per metric).
nlohmann::json run_seeds(const ExperimentConfig& cfg, const StageCache& cache,
                         bool baseline = false);

}  // namespace gdda
