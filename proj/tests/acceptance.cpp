// Acceptance suite: one test case per shipping criterion, each printing a
// single [PASS]/[FAIL] line with the measured quantities. Long-running
// criteria share a persistent stage cache under the working directory, so
// repeated runs and the ablation/baseline variants reuse common stages.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <random>
#include <vector>

#include <Eigen/Cholesky>

#include "gdda/checkpoint.hpp"
#include "gdda/pipeline.hpp"
#include "testutil.hpp"

using namespace gdda;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

void report(bool pass, int criterion, const std::string& label,
            const std::string& detail) {
  std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL",
              criterion, label.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---- shared fixtures -------------------------------------------------------

StageCache& shared_cache() {
  static StageCache cache("acceptance_cache");
  return cache;
}

// The default benchmark: 3 known + 1 unknown class, 2 training domains, 1
// held-out test domain, 60 graphs per cell — the stock configuration.
ExperimentConfig default_experiment(const std::vector<uint64_t>& seeds,
                                    const std::string& out,
                                    const std::string& ablation = "none") {
  json j;
  if (seeds.size() == 1)
    j["seed"] = seeds[0];
  else
    j["seeds"] = seeds;
  j["output_dir"] = out;
  if (ablation != "none") j["ablation"] = ablation;
  return parse_experiment_config(j);
}

// ---- independent metric oracles (quadratic counting / full scans) ---------

double oracle_auroc(const ScoredSet& ss) {
  double wins = 0.0;
  for (double o : ss.ood_scores)
    for (double i : ss.ind_scores) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return wins / (double(ss.ind_scores.size()) * double(ss.ood_scores.size()));
}

double oracle_aupr(const ScoredSet& ss) {
  std::vector<double> ts = ss.ood_scores;
  ts.insert(ts.end(), ss.ind_scores.begin(), ss.ind_scores.end());
  std::sort(ts.begin(), ts.end(), std::greater<double>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  double area = 0.0, prev = 0.0;
  for (double t : ts) {
    double tp = 0.0, fp = 0.0;
    for (double o : ss.ood_scores) tp += o >= t ? 1.0 : 0.0;
    for (double i : ss.ind_scores) fp += i >= t ? 1.0 : 0.0;
    double recall = tp / double(ss.ood_scores.size());
    if (tp + fp > 0.0) area += (recall - prev) * tp / (tp + fp);
    prev = recall;
  }
  return area;
}

double oracle_fpr95(const ScoredSet& ss) {
  double best = 0.0;
  bool found = false;
  for (double t : ss.ood_scores) {
    double tp = 0.0;
    for (double o : ss.ood_scores) tp += o >= t ? 1.0 : 0.0;
    if (tp / double(ss.ood_scores.size()) >= 0.95 && (!found || t > best)) {
      best = t;
      found = true;
    }
  }
  double fp = 0.0;
  for (double i : ss.ind_scores) fp += i >= best ? 1.0 : 0.0;
  return fp / double(ss.ind_scores.size());
}

// Max relative error between analytic gradients and central differences.
template <typename Objective>
double max_fd_error(const Objective& objective, ParameterSet params,
                    double step = 1e-5) {
  ad::Tape tape;
  ParamVars pv = register_params(tape, params);
  ad::Var out = objective(tape, pv);
  tape.backward(out);
  double worst = 0.0;
  for (size_t p = 0; p < params.entries().size(); ++p) {
    Eigen::MatrixXd analytic = tape.grad(pv.at(params.entries()[p].name));
    for (Eigen::Index i = 0; i < analytic.rows(); ++i)
      for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
        auto eval_at = [&](double delta) {
          ParameterSet shifted = params;
          shifted.entries()[p].value(i, j) += delta;
          ad::Tape t2;
          ParamVars pv2 = register_params(t2, shifted);
          return t2.scalar(objective(t2, pv2));
        };
        double fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
        double a = analytic(i, j);
        double rel = std::abs(a - fd) /
                     std::max({1e-6, std::abs(a), std::abs(fd)});
        worst = std::max(worst, rel);
      }
  }
  return worst;
}

}  // namespace

TEST_CASE("criterion 1: metric oracle equivalence") {
  Timer timer;
  std::mt19937_64 rng(416);
  std::uniform_int_distribution<int> size(1, 50);
  std::uniform_int_distribution<int> cell(0, 8);
  std::normal_distribution<double> gauss(0.0, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ScoredSet ss;
    int n = size(rng), m = size(rng);
    bool grid = trial % 2 == 0;
    for (int i = 0; i < n; ++i)
      ss.ind_scores.push_back(grid ? 0.5 * cell(rng) : gauss(rng));
    for (int i = 0; i < m; ++i)
      ss.ood_scores.push_back(grid ? 0.5 * cell(rng) : gauss(rng) + 0.5);
    ss.ind_correct.assign(ss.ind_scores.size(), true);
    worst = std::max(worst, std::abs(auroc(ss) - oracle_auroc(ss)));
    worst = std::max(worst, std::abs(aupr(ss) - oracle_aupr(ss)));
    worst = std::max(worst, std::abs(fpr_at_95tpr(ss) - oracle_fpr95(ss)));
  }
  double secs = timer.seconds();
  bool pass = worst < 1e-9 && secs < 10.0;
  report(pass, 1, "metric oracle equivalence",
         fmt("max deviation %.2e over 200 sets, %.1fs", worst, secs));
  CHECK(pass);
}

TEST_CASE("criterion 2: gradient fidelity at 10 random points each") {
  Timer timer;
  double worst_p1 = 0.0, worst_dsm = 0.0, worst_mm = 0.0;

  for (int point = 0; point < 10; ++point) {
    Rng rng = make_rng(mix_seed(100, point));

    {  // phase-1 total loss over the disentangler parameters
      DisentanglerConfig cfg;
      cfg.d = 4;
      cfg.d1 = 2;
      cfg.d2 = 2;
      cfg.hidden = 4;
      cfg.num_classes = 2;
      cfg.beta1 = 0.7;
      cfg.beta2 = 1.3;
      ParameterSet params = disentangler_init(cfg, rng);
      testutil::randomize(params, rng);
      Eigen::MatrixXd reps = randn_matrix(rng, 3, 4);
      Eigen::MatrixXd style_prime = randn_matrix(rng, 3, 2);
      std::vector<int> labels = {0, 1, 0};
      worst_p1 = std::max(
          worst_p1, max_fd_error(
                        [&](ad::Tape& t, const ParamVars& pv) {
                          return phase1_losses_t(t, pv, cfg, t.constant(reps),
                                                 labels, style_prime)
                              .total;
                        },
                        params));
    }

    {  // denoising score-matching loss over the score-net parameters
      DiffusionSchedule sched;
      ScoreNetConfig cfg;
      cfg.d1 = 2;
      cfg.d2 = 2;
      cfg.hidden = 4;
      ScoreNet net = score_net_init(cfg, rng);
      testutil::randomize(net.params, rng);
      DsmBatch batch = make_dsm_batch(sched, randn_matrix(rng, 3, 2),
                                      randn_matrix(rng, 3, 2), rng);
      worst_dsm = std::max(
          worst_dsm, max_fd_error(
                         [&](ad::Tape& t, const ParamVars& pv) {
                           return dsm_loss_t(t, pv, cfg, batch);
                         },
                         net.params));
    }

    {  // full min-max objective through backbone, head, and energy terms
      GinConfig gin;
      gin.d_in = 2;
      gin.hidden = 3;
      gin.d_out = 2;
      gin.num_layers = 1;
      MlpSpec head{2, 3, 2, /*tanh_hidden=*/true};
      EnergyConfig energy;
      DomainBatches batches;
      for (int d = 0; d < 2; ++d)
        for (int i = 0; i < 2; ++i) {
          batches[d].graphs.push_back(
              testutil::make_graph(i, 3, randn_matrix(rng, 3, 2), d));
          batches[d].labels.push_back(i);
        }
      Eigen::MatrixXd pseudo_ind = randn_matrix(rng, 2, 2);
      Eigen::MatrixXd pseudo_ood = randn_matrix(rng, 2, 2);
      ParameterSet params = gin_init(gin, rng);
      params.merge(head_init(head, rng));
      worst_mm = std::max(
          worst_mm,
          max_fd_error(
              [&](ad::Tape& t, const ParamVars& pv) {
                std::vector<ad::Var> reps;
                std::vector<std::vector<int>> labels;
                for (const auto& [domain, batch] : batches) {
                  std::vector<ad::Var> rows;
                  for (const GraphInstance& g : batch.graphs)
                    rows.push_back(gin_forward_t(gin, t, pv, g));
                  reps.push_back(t.vcat(rows));
                  labels.push_back(batch.labels);
                }
                return minmax_objective_t(t, pv, head, energy, reps, labels,
                                          pseudo_ind, pseudo_ood)
                    .objective;
              },
              params));
    }
  }

  double secs = timer.seconds();
  bool pass = worst_p1 < 1e-4 && worst_dsm < 1e-4 && worst_mm < 1e-4 &&
              secs < 120.0;
  report(pass, 2, "gradient fidelity",
         fmt("max rel err: phase1 %.2e, dsm %.2e, minmax %.2e, %.1fs",
             worst_p1, worst_dsm, worst_mm, secs));
  CHECK(pass);
}

TEST_CASE("criterion 3: diffusion inversion of a 2-D Gaussian") {
  Timer timer;
  Eigen::Vector2d mu(1.0, -0.5);
  Eigen::Matrix2d Sigma;
  Sigma << 0.64, 0.2, 0.2, 0.36;
  Eigen::Matrix2d L = Sigma.llt().matrixL();

  Rng rng = make_rng(3003);
  const int n = 4000;
  Eigen::MatrixXd x0 = randn_matrix(rng, n, 2) * L.transpose();
  x0.rowwise() += mu.transpose();

  DiffusionSchedule sched;
  sched.num_steps = 400;
  ScoreNetConfig cfg;
  cfg.d1 = 1;
  cfg.d2 = 1;
  cfg.hidden = 64;
  ScoreNet net = score_net_init(cfg, rng);
  ScoreTrainOptions opts;
  opts.epochs = 3000;
  opts.lr = 1e-3;
  opts.batch_size = 128;
  train_score(net, sched, x0.col(0), x0.col(1), opts, rng);

  PerturbationConfig pcfg;
  pcfg.lambda_c = 0.0;
  pcfg.lambda_s = 0.0;
  pcfg.num_samples = 2000;
  pcfg.seed = 77;
  FactorPair fp = reverse_sample(net, sched, pcfg);
  Eigen::MatrixXd samples(2000, 2);
  samples << fp.semantic, fp.style;

  Eigen::RowVector2d mean = samples.colwise().mean();
  Eigen::MatrixXd centered = samples.rowwise() - mean;
  Eigen::Matrix2d cov =
      centered.transpose() * centered / double(samples.rows() - 1);
  double mean_err = (mean.transpose() - mu).cwiseAbs().maxCoeff();
  double cov_err = (cov - Sigma).cwiseAbs().maxCoeff();

  double secs = timer.seconds();
  bool pass = mean_err < 0.1 && cov_err < 0.15 && secs < 300.0;
  report(pass, 3, "diffusion inversion",
         fmt("mean err %.3f (tol 0.1), cov err %.3f (tol 0.15), %.0fs",
             mean_err, cov_err, secs));
  CHECK(pass);
}

TEST_CASE("criterion 4: centroid drift grows with lambda") {
  Timer timer;
  const std::vector<double> lambdas = {0.0, 0.1, 0.4, 0.7};
  int monotone = 0;
  std::string per_seed;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    ExperimentConfig cfg = default_experiment(
        {seed}, "acceptance_out/sweep_seed" + std::to_string(seed));
    std::vector<SweepRow> rows =
        run_lambda_sweep(cfg, shared_cache(), lambdas);
    bool ok = true;
    for (size_t i = 1; i < rows.size(); ++i)
      ok = ok && rows[i].mean_distance_c >= rows[i - 1].mean_distance_c &&
           rows[i].mean_distance_s >= rows[i - 1].mean_distance_s;
    monotone += ok ? 1 : 0;
    per_seed += fmt("seed %llu %s ", (unsigned long long)seed,
                    ok ? "monotone" : "non-monotone");
  }
  double secs = timer.seconds();
  bool pass = monotone >= 2 && secs < 300.0;
  report(pass, 4, "lambda sweep drift",
         fmt("%d/3 seeds monotone: %s%.0fs", monotone, per_seed.c_str(),
             secs));
  CHECK(pass);
}

TEST_CASE("criterion 5: benchmark AUROC beats 0.70 and the energy baseline") {
  Timer timer;
  const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  ExperimentConfig full_cfg = default_experiment(seeds, "acceptance_out/full");
  json full = run_seeds(full_cfg, shared_cache());
  ExperimentConfig base_cfg =
      default_experiment(seeds, "acceptance_out/baseline");
  json base = run_seeds(base_cfg, shared_cache(), /*baseline=*/true);

  double full_mean = full["auroc"]["mean"].get<double>();
  double base_mean = base["auroc"]["mean"].get<double>();
  double secs = timer.seconds();
  bool pass = full_mean >= 0.70 && full_mean >= base_mean && secs < 1200.0;
  report(pass, 5, "synthetic benchmark",
         fmt("GDDA AUROC %.3f (>= 0.70), energy baseline %.3f, 5 seeds, %.0fs",
             full_mean, base_mean, secs));
  CHECK(pass);
}

TEST_CASE("criterion 6: ablations do not beat the full method") {
  Timer timer;
  const std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  json full = run_seeds(default_experiment(seeds, "acceptance_out/full"),
                        shared_cache());
  json no_ind = run_seeds(
      default_experiment(seeds, "acceptance_out/no_pseudo_ind",
                         "no_pseudo_ind"),
      shared_cache());
  json no_ood = run_seeds(
      default_experiment(seeds, "acceptance_out/no_pseudo_ood",
                         "no_pseudo_ood"),
      shared_cache());

  double full_mean = full["auroc"]["mean"].get<double>();
  double full_std = full["auroc"]["std"].get<double>();
  double ind_mean = no_ind["auroc"]["mean"].get<double>();
  double ood_mean = no_ood["auroc"]["mean"].get<double>();

  bool ind_ahead = ind_mean > full_mean;
  bool ood_ahead = ood_mean > full_mean;
  bool hard_fail = (ind_mean - full_mean > full_std) &&
                   (ood_mean - full_mean > full_std);
  if (!hard_fail && (ind_ahead || ood_ahead))
    std::printf(
        "[WARN] criterion 6: an ablation edges out full GDDA within 1 std "
        "(full %.3f+/-%.3f, no_pseudo_ind %.3f, no_pseudo_ood %.3f)\n",
        full_mean, full_std, ind_mean, ood_mean);

  double secs = timer.seconds();
  bool pass = !hard_fail && secs < 1200.0;
  report(pass, 6, "ablation direction",
         fmt("full %.3f+/-%.3f vs no_pseudo_ind %.3f, no_pseudo_ood %.3f, "
             "%.0fs",
             full_mean, full_std, ind_mean, ood_mean, secs));
  CHECK(pass);
}

TEST_CASE("criterion 7: energy-loss exactness") {
  EnergyConfig cfg;  // m_in = -7, m_ood = -2
  MlpSpec head{1, 0, 1};
  Rng rng = make_rng(7007);
  ParameterSet ps = head_init(head, rng);
  testutil::set_affine_identity(ps, "head", 1);

  bool zero_exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    // rep value v maps to energy -v: draw InD below m_in, OOD above m_ood
    Eigen::MatrixXd ind =
        (-cfg.m_in + 0.5) * (randn_matrix(rng, 4, 1).cwiseAbs() +
                             Eigen::MatrixXd::Constant(4, 1, 1.0));
    Eigen::MatrixXd ood =
        randn_matrix(rng, 4, 1).cwiseAbs() * 0.3;  // energies <= 0 < m_ood + 2
    ood = ood.cwiseMin(-cfg.m_ood - 0.1);          // keep energy >= m_ood
    zero_exact = zero_exact &&
                 energy_margin_loss(ps, head, cfg, ind, ood) == 0.0;
  }

  double worst_shift = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::RowVectorXd z = randn_matrix(rng, 1, 5).row(0) * 3.0;
    double k = rand_normal(rng) * 4.0;
    Eigen::RowVectorXd shifted = (z.array() + k).matrix();
    worst_shift = std::max(
        worst_shift, std::abs(energy(shifted, 1.0) - (energy(z, 1.0) - k)));
  }

  bool pass = zero_exact && worst_shift < 1e-9;
  report(pass, 7, "energy-loss exactness",
         fmt("satisfied-margin loss exactly zero: %s; max shift defect %.2e",
             zero_exact ? "yes" : "no", worst_shift));
  CHECK(pass);
}

TEST_CASE("criterion 8: identical config and seed reproduce metrics exactly") {
  Timer timer;
  auto small = [](const std::string& out) {
    json j;
    j["seed"] = 9;
    j["output_dir"] = out;
    j["benchmark"] = {{"graphs_per_cell", 6}, {"nodes_min", 5},
                      {"nodes_max", 7},       {"d_in", 6}};
    j["gin"] = {{"hidden", 8}, {"d_out", 8}, {"num_layers", 1}};
    j["disentangler"] = {{"d1", 4}, {"d2", 4}, {"hidden", 8}, {"epochs", 10}};
    j["schedule"] = {{"num_steps", 20}};
    j["score"] = {{"hidden", 16}, {"epochs", 40}, {"batch_size", 32}};
    j["pseudo"] = {{"count", 12}};
    j["detector"] = {{"head_hidden", 8}, {"epochs", 20}};
    return parse_experiment_config(j);
  };
  StageCache none;
  fs::remove_all("acceptance_out/det_a");
  fs::remove_all("acceptance_out/det_b");
  fs::path a = run_pipeline(small("acceptance_out/det_a"), none);
  fs::path b = run_pipeline(small("acceptance_out/det_b"), none);
  std::ifstream fa(a), fb(b);
  json ja = json::parse(fa), jb = json::parse(fb);
  bool pass = ja == jb && !ja.empty();
  report(pass, 8, "determinism",
         fmt("two fresh runs, %zu metric fields, identical: %s, %.0fs",
             ja.size(), ja == jb ? "yes" : "no", timer.seconds()));
  CHECK(pass);
}

TEST_CASE("criterion 9: serialization round-trips are exact") {
  testutil::TempDir tmp;
  std::mt19937_64 meta_rng(909);
  std::uniform_int_distribution<int> classes(2, 4);
  std::uniform_int_distribution<int> cell(1, 3);
  std::uniform_int_distribution<int> nmin(3, 5);
  std::uniform_int_distribution<int> span(1, 4);
  std::uniform_int_distribution<int> dims(1, 5);
  std::uniform_real_distribution<double> noise(0.0, 0.4);

  bool all_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    // randomized benchmark -> dataset JSONL round-trip
    BenchmarkSpec spec;
    int k = classes(meta_rng);
    for (int ci = 0; ci < k; ++ci) spec.known_classes.push_back(ci);
    spec.unknown_classes = {k};
    spec.train_domains = {0};
    spec.test_domains = {1};
    spec.graphs_per_cell = cell(meta_rng);
    spec.nodes_min = nmin(meta_rng);
    spec.nodes_max = spec.nodes_min + span(meta_rng);
    spec.noise_scale = noise(meta_rng);
    spec.seed = 1000 + trial;
    Rng style_rng = make_rng(spec.seed);
    spec.style_vectors = {randn_vector(style_rng, 6),
                          randn_vector(style_rng, 6)};
    DatasetSplit split = generate_benchmark(spec);
    fs::path dpath = tmp.path / ("d" + std::to_string(trial) + ".jsonl");
    save_dataset(split, dpath);
    all_exact = all_exact && load_dataset(dpath) == split;

    // randomized parameter set -> checkpoint round-trip (float32 payload)
    ParameterSet ps;
    Rng prng = make_rng(mix_seed(2000, trial));
    int entries = 1 + trial % 3;
    for (int e = 0; e < entries; ++e) {
      Eigen::MatrixXd m = randn_matrix(prng, dims(meta_rng), dims(meta_rng));
      m = m.unaryExpr(
          [](double v) { return double(float(v)); });  // storage precision
      ps.add("block" + std::to_string(e) + ".w", m);
    }
    json meta = {{"stage", "roundtrip"}, {"trial", trial}};
    fs::path stem = tmp.path / ("ckpt" + std::to_string(trial));
    save_checkpoint(stem.string(), ps, meta);
    json meta_back;
    ParameterSet loaded = load_checkpoint(stem.string(), &meta_back);
    all_exact = all_exact && loaded == ps && meta_back.at("trial") == trial;
  }

  report(all_exact, 9, "serialization round-trips",
         "50 randomized datasets and checkpoints, exact equality");
  CHECK(all_exact);
}
