#include "gdda/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gdda {

namespace {

// Independent RNG streams derived from the run seed.
enum Stream : uint64_t {
  kStreamData = 1,
  kStreamStyle = 2,
  kStreamPhase1 = 3,
  kStreamScore = 4,
  kStreamPseudo = 5,
  kStreamDetector = 6,
  kStreamSweep = 7,
};

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed)
      if (item.key() == key) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError("config: unknown key '" + where + "." + item.key() +
                        "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T def) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

json section(const json& raw, const char* key) {
  return raw.contains(key) ? raw.at(key) : json::object();
}

}  // namespace

MlpSpec ExperimentConfig::head_spec() const {
  // tanh hidden: pseudo representations decoded from heavily perturbed
  // factors can sit far outside the data range; a saturating hidden layer
  // keeps their logits (and margin-loss gradients) bounded.
  return {gin.d_out, head_hidden, num_known(), /*tanh_hidden=*/true};
}

int ExperimentConfig::class_index(int label) const {
  std::vector<int> sorted = known_classes;
  std::sort(sorted.begin(), sorted.end());
  auto it = std::lower_bound(sorted.begin(), sorted.end(), label);
  if (it == sorted.end() || *it != label) return -1;
  return static_cast<int>(it - sorted.begin());
}

ExperimentConfig parse_experiment_config(const json& raw) {
  check_keys(raw, "",
             {"seed", "seeds", "output_dir", "ablation", "benchmark", "gin",
              "disentangler", "phase1", "schedule", "score", "pseudo",
              "detector"});
  ExperimentConfig cfg;
  cfg.seed = get_or<uint64_t>(raw, "seed", 1);
  cfg.seeds = get_or<std::vector<uint64_t>>(raw, "seeds", {});
  cfg.output_dir = get_or<std::string>(raw, "output_dir", "out");
  cfg.ablation = get_or<std::string>(raw, "ablation", "none");
  if (cfg.ablation != "none" && cfg.ablation != "no_pseudo_ind" &&
      cfg.ablation != "no_pseudo_ood")
    throw ConfigError("config: unknown ablation '" + cfg.ablation + "'");

  json b = section(raw, "benchmark");
  check_keys(b, "benchmark",
             {"known_classes", "unknown_classes", "train_domains",
              "test_domains", "graphs_per_cell", "nodes_min", "nodes_max",
              "d_in", "style_scale", "style_vectors", "noise_scale"});
  cfg.known_classes = get_or<std::vector<int>>(b, "known_classes", {0, 1, 2});
  cfg.unknown_classes = get_or<std::vector<int>>(b, "unknown_classes", {3});
  cfg.train_domains = get_or<std::vector<int>>(b, "train_domains", {0, 1});
  cfg.test_domains = get_or<std::vector<int>>(b, "test_domains", {2});
  cfg.graphs_per_cell = get_or<int>(b, "graphs_per_cell", 60);
  cfg.nodes_min = get_or<int>(b, "nodes_min", 6);
  cfg.nodes_max = get_or<int>(b, "nodes_max", 10);
  cfg.d_in = get_or<int>(b, "d_in", 8);
  cfg.style_scale = get_or<double>(b, "style_scale", 1.5);
  cfg.noise_scale = get_or<double>(b, "noise_scale", 0.3);
  if (b.contains("style_vectors")) {
    for (const json& row : b.at("style_vectors")) {
      Eigen::VectorXd v(row.size());
      for (size_t i = 0; i < row.size(); ++i) v(i) = row.at(i).get<double>();
      cfg.style_vectors.push_back(std::move(v));
    }
  }

  json g = section(raw, "gin");
  check_keys(g, "gin", {"hidden", "d_out", "num_layers", "eps", "readout"});
  cfg.gin.d_in = cfg.d_in;
  cfg.gin.hidden = get_or<int>(g, "hidden", 32);
  cfg.gin.d_out = get_or<int>(g, "d_out", 16);
  cfg.gin.num_layers = get_or<int>(g, "num_layers", 1);
  cfg.gin.eps = get_or<double>(g, "eps", 0.0);
  std::string readout = get_or<std::string>(g, "readout", "mean");
  if (readout != "sum" && readout != "mean")
    throw ConfigError("config: gin.readout must be 'sum' or 'mean'");
  cfg.gin.mean_readout = readout == "mean";

  json d = section(raw, "disentangler");
  check_keys(d, "disentangler",
             {"d1", "d2", "hidden", "beta1", "beta2", "epochs", "lr"});
  cfg.dis.d = cfg.gin.d_out;
  cfg.dis.d1 = get_or<int>(d, "d1", cfg.gin.d_out / 2);
  cfg.dis.d2 = get_or<int>(d, "d2", cfg.gin.d_out - cfg.gin.d_out / 2);
  cfg.dis.hidden = get_or<int>(d, "hidden", cfg.gin.d_out);
  cfg.dis.num_classes = cfg.num_known();
  cfg.dis.beta1 = get_or<double>(d, "beta1", 1.0);
  cfg.dis.beta2 = get_or<double>(d, "beta2", 1.0);
  cfg.phase1.epochs = get_or<int>(d, "epochs", 200);
  cfg.phase1.lr = get_or<double>(d, "lr", 1e-3);

  json sc = section(raw, "schedule");
  check_keys(sc, "schedule", {"beta_min", "beta_max", "horizon", "num_steps"});
  cfg.schedule.beta_min = get_or<double>(sc, "beta_min", 0.1);
  cfg.schedule.beta_max = get_or<double>(sc, "beta_max", 20.0);
  cfg.schedule.T = get_or<double>(sc, "horizon", 1.0);
  cfg.schedule.num_steps = get_or<int>(sc, "num_steps", 400);

  json s = section(raw, "score");
  check_keys(s, "score", {"hidden", "epochs", "lr", "batch_size"});
  cfg.score.d1 = cfg.dis.d1;
  cfg.score.d2 = cfg.dis.d2;
  cfg.score.hidden = get_or<int>(s, "hidden", 64);
  cfg.score_train.epochs = get_or<int>(s, "epochs", 4000);
  cfg.score_train.lr = get_or<double>(s, "lr", 1e-3);
  cfg.score_train.batch_size = get_or<int>(s, "batch_size", 128);

  json p = section(raw, "pseudo");
  check_keys(p, "pseudo", {"lambda_c", "lambda_s", "count"});
  cfg.lambda_c = get_or<double>(p, "lambda_c", 0.4);
  cfg.lambda_s = get_or<double>(p, "lambda_s", 0.6);
  cfg.pseudo_count = get_or<int>(p, "count", 0);

  json det = section(raw, "detector");
  check_keys(det, "detector",
             {"temperature", "m_in", "m_ood", "lambda_weight", "head_hidden",
              "epochs", "lr", "train_backbone"});
  cfg.energy.temperature = get_or<double>(det, "temperature", 1.0);
  cfg.energy.m_in = get_or<double>(det, "m_in", -5.0);
  cfg.energy.m_ood = get_or<double>(det, "m_ood", -2.0);
  cfg.energy.lambda_weight = get_or<double>(det, "lambda_weight", 0.1);
  cfg.head_hidden = get_or<int>(det, "head_hidden", 32);
  cfg.detector_epochs = get_or<int>(det, "epochs", 300);
  cfg.detector_lr = get_or<double>(det, "lr", 1e-3);
  cfg.train_backbone = get_or<bool>(det, "train_backbone", false);

  // cross-field validation
  cfg.gin.validate();
  cfg.dis.validate();
  cfg.schedule.validate();
  cfg.score.validate();
  cfg.energy.validate();
  if (cfg.num_known() < 2)
    throw ConfigError("config: need at least 2 known classes");
  if (cfg.phase1.epochs < 0 || cfg.score_train.epochs < 0 ||
      cfg.detector_epochs < 0)
    throw ConfigError("config: epoch counts must be nonnegative");
  if (!(cfg.phase1.lr > 0.0) || !(cfg.score_train.lr > 0.0) ||
      !(cfg.detector_lr > 0.0))
    throw ConfigError("config: learning rates must be positive");
  if (cfg.lambda_c < 0.0 || cfg.lambda_c > 1.0 || cfg.lambda_s < 0.0 ||
      cfg.lambda_s > 1.0)
    throw ConfigError("config: pseudo lambdas must lie in [0, 1]");
  if (cfg.pseudo_count < 0)
    throw ConfigError("config: pseudo.count must be nonnegative");
  if (cfg.head_hidden < 0)
    throw ConfigError("config: detector.head_hidden must be nonnegative");

  // canonical resolved settings; seed/seeds/output_dir stay out so the hash
  // identifies the configuration, not the run
  json c;
  c["ablation"] = cfg.ablation;
  json bj;
  bj["known_classes"] = cfg.known_classes;
  bj["unknown_classes"] = cfg.unknown_classes;
  bj["train_domains"] = cfg.train_domains;
  bj["test_domains"] = cfg.test_domains;
  bj["graphs_per_cell"] = cfg.graphs_per_cell;
  bj["nodes_min"] = cfg.nodes_min;
  bj["nodes_max"] = cfg.nodes_max;
  bj["d_in"] = cfg.d_in;
  bj["style_scale"] = cfg.style_scale;
  json styles = json::array();
  for (const auto& v : cfg.style_vectors) {
    json row = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) row.push_back(v(i));
    styles.push_back(std::move(row));
  }
  bj["style_vectors"] = std::move(styles);
  bj["noise_scale"] = cfg.noise_scale;
  c["benchmark"] = std::move(bj);
  c["gin"] = {{"hidden", cfg.gin.hidden},
              {"d_out", cfg.gin.d_out},
              {"num_layers", cfg.gin.num_layers},
              {"eps", cfg.gin.eps},
              {"readout", readout}};
  c["disentangler"] = {{"d1", cfg.dis.d1},       {"d2", cfg.dis.d2},
                       {"hidden", cfg.dis.hidden}, {"beta1", cfg.dis.beta1},
                       {"beta2", cfg.dis.beta2},   {"epochs", cfg.phase1.epochs},
                       {"lr", cfg.phase1.lr}};
  c["schedule"] = {{"beta_min", cfg.schedule.beta_min},
                   {"beta_max", cfg.schedule.beta_max},
                   {"horizon", cfg.schedule.T},
                   {"num_steps", cfg.schedule.num_steps}};
  c["score"] = {{"hidden", cfg.score.hidden},
                {"epochs", cfg.score_train.epochs},
                {"lr", cfg.score_train.lr},
                {"batch_size", cfg.score_train.batch_size}};
  c["pseudo"] = {{"lambda_c", cfg.lambda_c},
                 {"lambda_s", cfg.lambda_s},
                 {"count", cfg.pseudo_count}};
  c["detector"] = {{"temperature", cfg.energy.temperature},
                   {"m_in", cfg.energy.m_in},
                   {"m_ood", cfg.energy.m_ood},
                   {"lambda_weight", cfg.energy.lambda_weight},
                   {"head_hidden", cfg.head_hidden},
                   {"epochs", cfg.detector_epochs},
                   {"lr", cfg.detector_lr},
                   {"train_backbone", cfg.train_backbone}};
  cfg.canonical = std::move(c);
  cfg.config_hash = sha256_hex(cfg.canonical.dump());
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  json raw = json::parse(in, nullptr, false);
  if (raw.is_discarded())
    throw ConfigError("config is not valid JSON: " + path.string());
  return parse_experiment_config(raw);
}

BenchmarkSpec resolved_benchmark(const ExperimentConfig& cfg) {
  BenchmarkSpec b;
  b.known_classes = cfg.known_classes;
  b.unknown_classes = cfg.unknown_classes;
  b.train_domains = cfg.train_domains;
  b.test_domains = cfg.test_domains;
  b.graphs_per_cell = cfg.graphs_per_cell;
  b.nodes_min = cfg.nodes_min;
  b.nodes_max = cfg.nodes_max;
  b.noise_scale = cfg.noise_scale;
  b.seed = mix_seed(cfg.seed, kStreamData);
  if (!cfg.style_vectors.empty()) {
    b.style_vectors = cfg.style_vectors;
  } else {
    // Style occupies the feature coordinates past the class signatures, so a
    // domain shift moves the covariates without overwriting class evidence.
    // Fixed-radius draws keep the shift magnitude comparable across seeds;
    // only the direction varies.
    Rng rng = make_rng(mix_seed(cfg.seed, kStreamStyle));
    int style_dims = cfg.d_in - b.num_classes();
    for (int k = 0; k < b.num_domains(); ++k) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.d_in);
      if (style_dims > 0) {
        Eigen::VectorXd dir = randn_vector(rng, style_dims);
        double norm = dir.norm();
        if (norm > 0.0)
          v.tail(style_dims) = cfg.style_scale * dir / norm;
      }
      b.style_vectors.push_back(v);
    }
  }
  b.validate();
  return b;
}

// --- stage cache ---

StageCache::StageCache(fs::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) fs::create_directories(dir_);
}

bool StageCache::restore(const std::string& key,
                         const std::vector<std::string>& files,
                         const fs::path& dst_dir) const {
  if (!enabled()) return false;
  fs::path entry = dir_ / key;
  if (!fs::exists(entry / "ok")) return false;
  for (const std::string& f : files)
    if (!fs::exists(entry / f)) return false;
  for (const std::string& f : files)
    fs::copy_file(entry / f, dst_dir / f, fs::copy_options::overwrite_existing);
  return true;
}

void StageCache::store(const std::string& key,
                       const std::vector<std::string>& files,
                       const fs::path& src_dir) const {
  if (!enabled()) return;
  fs::path entry = dir_ / key;
  if (fs::exists(entry / "ok")) return;
  fs::path tmp = dir_ / (key + ".tmp" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  for (const std::string& f : files)
    fs::copy_file(src_dir / f, tmp / f, fs::copy_options::overwrite_existing);
  std::ofstream(tmp / "ok") << key << "\n";
  std::error_code ec;
  fs::rename(tmp, entry, ec);
  if (ec) fs::remove_all(tmp);  // another process finished this entry first
}

// --- stage keys ---

namespace {
// Bumped whenever a stage's interpretation of its config changes, so cache
// entries written by an older build miss instead of resurfacing stale bytes.
constexpr const char* kCacheSchema = "gdda-stage-v3|";
std::string keyed(const std::string& material) {
  return sha256_hex(kCacheSchema + material);
}
std::string seed_tag(const ExperimentConfig& cfg) {
  return "|seed=" + std::to_string(cfg.seed);
}
}  // namespace

std::string data_key(const ExperimentConfig& cfg) {
  return keyed("data|" + cfg.canonical.at("benchmark").dump() + seed_tag(cfg));
}

std::string phase1_key(const ExperimentConfig& cfg) {
  return keyed("phase1|" + data_key(cfg) + cfg.canonical.at("gin").dump() +
               cfg.canonical.at("disentangler").dump() + seed_tag(cfg));
}

std::string score_key(const ExperimentConfig& cfg) {
  return keyed("score|" + phase1_key(cfg) +
               cfg.canonical.at("schedule").dump() +
               cfg.canonical.at("score").dump() + seed_tag(cfg));
}

std::string pseudo_key(const ExperimentConfig& cfg) {
  return keyed("pseudo|" + score_key(cfg) + cfg.canonical.at("pseudo").dump() +
               seed_tag(cfg));
}

std::string detector_key(const ExperimentConfig& cfg, bool baseline) {
  std::string upstream = baseline ? phase1_key(cfg) : pseudo_key(cfg);
  return keyed("detector|" + upstream + cfg.canonical.at("detector").dump() +
               "|ablation=" + cfg.ablation +
               (baseline ? "|baseline" : "|full") + seed_tag(cfg));
}

// --- stages ---

namespace {

const std::vector<std::string> kDataFiles = {"dataset.jsonl"};
const std::vector<std::string> kPhase1Files = {"phase1.json", "phase1.bin",
                                               "phase1_log.csv"};
const std::vector<std::string> kScoreFiles = {"score.json", "score.bin",
                                              "score_log.csv"};
const std::vector<std::string> kPseudoFiles = {"pseudo.jsonl"};
const std::vector<std::string> kDetectorFiles = {
    "detector.json", "detector.bin", "detector_energy.json",
    "detector_log.csv"};

std::vector<int> mapped_labels(const ExperimentConfig& cfg,
                               const std::vector<GraphInstance>& graphs) {
  std::vector<int> labels;
  labels.reserve(graphs.size());
  for (const GraphInstance& g : graphs) {
    int idx = cfg.class_index(g.label);
    if (idx < 0)
      throw UsageError("instance " + g.instance_id +
                       " has a label outside the known classes");
    labels.push_back(idx);
  }
  return labels;
}

ScoreNet load_score_net(const ExperimentConfig& cfg, const RunPaths& paths) {
  ScoreNet net;
  net.cfg = cfg.score;
  json meta;
  net.params = load_checkpoint(paths.score_stem(), &meta);
  net.trained = meta.value("trained", false);
  return net;
}

}  // namespace

void stage_data(const ExperimentConfig& cfg, const RunPaths& paths,
                const StageCache& cache) {
  log_info("stage data: generating benchmark");
  DatasetSplit split = generate_benchmark(resolved_benchmark(cfg));
  save_dataset(split, paths.dataset());
  cache.store(data_key(cfg), kDataFiles, paths.out);
}

void stage_phase1(const ExperimentConfig& cfg, const RunPaths& paths,
                  const StageCache& cache) {
  log_info("stage phase1: joint backbone + disentangler training");
  DatasetSplit split = load_dataset(paths.dataset());
  Rng rng = make_rng(mix_seed(cfg.seed, kStreamPhase1));
  ParameterSet params = gin_init(cfg.gin, rng);
  params.merge(disentangler_init(cfg.dis, rng));
  std::vector<int> labels = mapped_labels(cfg, split.train);
  EpochLog log = train_phase1_joint(cfg.gin, cfg.dis, params, split.train,
                                    labels, cfg.phase1, rng);
  json meta;
  meta["stage"] = "phase1";
  meta["gin"] = cfg.canonical.at("gin");
  meta["disentangler"] = cfg.canonical.at("disentangler");
  save_checkpoint(paths.phase1_stem(), params, meta);
  write_phase1_log(log, paths.phase1_log());
  cache.store(phase1_key(cfg), kPhase1Files, paths.out);
}

void stage_score(const ExperimentConfig& cfg, const RunPaths& paths,
                 const StageCache& cache) {
  log_info("stage score: denoising score matching");
  DatasetSplit split = load_dataset(paths.dataset());
  ParameterSet phase1 = load_checkpoint(paths.phase1_stem());
  Eigen::MatrixXd reps = gin_forward_batch(cfg.gin, phase1, split.train);
  FactorPair factors = encode(cfg.dis, phase1, reps);
  Rng rng = make_rng(mix_seed(cfg.seed, kStreamScore));
  ScoreNet net = score_net_init(cfg.score, rng);
  std::vector<double> log = train_score(net, cfg.schedule, factors.semantic,
                                        factors.style, cfg.score_train, rng);
  json meta;
  meta["stage"] = "score";
  meta["trained"] = net.trained;
  meta["score"] = cfg.canonical.at("score");
  save_checkpoint(paths.score_stem(), net.params, meta);
  write_loss_log(log, paths.score_log());
  cache.store(score_key(cfg), kScoreFiles, paths.out);
}

void stage_pseudo(const ExperimentConfig& cfg, const RunPaths& paths,
                  const StageCache& cache) {
  log_info("stage pseudo: shift-controlled sampling");
  DatasetSplit split = load_dataset(paths.dataset());
  ParameterSet phase1 = load_checkpoint(paths.phase1_stem());
  ScoreNet net = load_score_net(cfg, paths);
  int n = cfg.pseudo_count > 0 ? cfg.pseudo_count
                               : static_cast<int>(split.train.size());
  auto [ind, ood] =
      generate_pseudo(net, cfg.schedule, cfg.dis, phase1, cfg.lambda_c,
                      cfg.lambda_s, n, mix_seed(cfg.seed, kStreamPseudo));
  PseudoSets sets;
  sets.ind = std::move(ind);
  sets.ood = std::move(ood);
  sets.lambda_c = cfg.lambda_c;
  sets.lambda_s = cfg.lambda_s;
  save_pseudo(sets, paths.pseudo());
  cache.store(pseudo_key(cfg), kPseudoFiles, paths.out);
}

void stage_detector(const ExperimentConfig& cfg, const RunPaths& paths,
                    const StageCache& cache, bool baseline) {
  log_info(baseline ? "stage detector: energy baseline"
                    : "stage detector: min-max training");
  DatasetSplit split = load_dataset(paths.dataset());
  ParameterSet phase1 = load_checkpoint(paths.phase1_stem());

  Eigen::MatrixXd pseudo_ind(0, cfg.gin.d_out), pseudo_ood(0, cfg.gin.d_out);
  if (!baseline) {
    PseudoSets sets = load_pseudo(paths.pseudo());
    if (cfg.ablation != "no_pseudo_ind") pseudo_ind = std::move(sets.ind);
    if (cfg.ablation != "no_pseudo_ood") pseudo_ood = std::move(sets.ood);
  }

  DetectorModel model;
  model.gin = cfg.gin;
  model.head = cfg.head_spec();
  model.energy = cfg.energy;
  Rng rng = make_rng(mix_seed(cfg.seed, kStreamDetector));
  model.params = phase1.section("gin.");
  model.params.merge(head_init(model.head, rng));

  DomainBatches batches;
  for (const GraphInstance& g : split.train) {
    batches[g.domain].graphs.push_back(g);
    batches[g.domain].labels.push_back(cfg.class_index(g.label));
  }
  DetectorTrainOptions opts;
  opts.epochs = cfg.detector_epochs;
  opts.lr = cfg.detector_lr;
  opts.train_backbone = cfg.train_backbone;
  DetectorLog log =
      train_detector(model, batches, pseudo_ind, pseudo_ood, opts, rng);
  save_detector(model, paths.detector_stem());
  write_detector_log(log, paths.detector_log());
  cache.store(detector_key(cfg, baseline), kDetectorFiles, paths.out);
}

json stage_eval(const ExperimentConfig& cfg, const RunPaths& paths,
                bool baseline) {
  log_info("stage eval: scoring test sets");
  DatasetSplit split = load_dataset(paths.dataset());
  DetectorModel model = load_detector(paths.detector_stem());

  ScoredSet ss;
  for (const GraphInstance& g : split.test_ind) {
    DetectionResult r = detect(model, g);
    ss.ind_scores.push_back(r.energy);
    ss.ind_correct.push_back(r.predicted_class == cfg.class_index(g.label));
  }
  for (const GraphInstance& g : split.test_ood)
    ss.ood_scores.push_back(detect(model, g).energy);

  json report;
  report["auroc"] = auroc(ss);
  report["aupr"] = aupr(ss);
  report["fpr95"] = fpr_at_95tpr(ss);
  report["ind_acc"] = ind_accuracy(ss);
  report["n_ind"] = ss.ind_scores.size();
  report["n_ood"] = ss.ood_scores.size();
  report["seed"] = cfg.seed;
  report["config_hash"] = cfg.config_hash;
  report["method"] = baseline ? "energy_baseline" : "gdda";
  report["ablation"] = cfg.ablation;
  report["threshold"] = model.energy.threshold;
  std::ofstream out(paths.metrics());
  if (!out) throw IoError("cannot write metrics: " + paths.metrics().string());
  out << report.dump(2) << "\n";

  if (!baseline && fs::exists(paths.pseudo())) {
    PseudoSets sets = load_pseudo(paths.pseudo());
    Eigen::MatrixXd originals =
        gin_forward_batch(model.gin, model.params, split.train);
    std::vector<std::pair<Eigen::MatrixXd, std::string>> groups;
    groups.emplace_back(std::move(originals), "original");
    groups.emplace_back(std::move(sets.ind), "pseudo_ind");
    groups.emplace_back(std::move(sets.ood), "pseudo_ood");
    write_projection_csv(project_2d(groups), paths.projection());
  }
  return report;
}

// --- pipeline drivers ---

namespace {

std::string iso_timestamp() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

struct StageRunner {
  const RunPaths& paths;
  const StageCache& cache;
  json records = json::array();

  void run(const std::string& name, const std::string& key,
           const std::vector<std::string>& files,
           const std::function<void()>& fn) {
    auto t0 = std::chrono::steady_clock::now();
    bool cached = cache.restore(key, files, paths.out);
    if (cached) log_info("stage " + name + ": cache hit");
    if (!cached) fn();
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
    json rec;
    rec["stage"] = name;
    rec["key"] = key;
    rec["cached"] = cached;
    rec["duration_ms"] = ms;
    json artifacts;
    for (const std::string& f : files)
      artifacts[f] = sha256_file(paths.out / f);
    rec["artifacts"] = std::move(artifacts);
    records.push_back(std::move(rec));
  }
};

void write_manifest(const ExperimentConfig& cfg, const RunPaths& paths,
                    const json& stages, const std::string& failed_stage,
                    const std::string& error) {
  json m;
  m["config_hash"] = cfg.config_hash;
  m["seed"] = cfg.seed;
  m["ablation"] = cfg.ablation;
  m["timestamp"] = iso_timestamp();
  m["stages"] = stages;
  if (!failed_stage.empty()) {
    m["failed_stage"] = failed_stage;
    m["error"] = error;
  }
  std::ofstream out(paths.manifest());
  if (out) out << m.dump(2) << "\n";
}

}  // namespace

fs::path run_pipeline(const ExperimentConfig& cfg, const StageCache& cache,
                      bool baseline) {
  RunPaths paths{cfg.output_dir};
  fs::create_directories(paths.out);
  StageRunner runner{paths, cache};
  std::string current = "data";
  try {
    runner.run("data", data_key(cfg), kDataFiles,
               [&] { stage_data(cfg, paths, cache); });
    current = "phase1";
    runner.run("phase1", phase1_key(cfg), kPhase1Files,
               [&] { stage_phase1(cfg, paths, cache); });
    if (!baseline) {
      current = "score";
      runner.run("score", score_key(cfg), kScoreFiles,
                 [&] { stage_score(cfg, paths, cache); });
      current = "pseudo";
      runner.run("pseudo", pseudo_key(cfg), kPseudoFiles,
                 [&] { stage_pseudo(cfg, paths, cache); });
    }
    current = "detector";
    runner.run("detector", detector_key(cfg, baseline), kDetectorFiles,
               [&] { stage_detector(cfg, paths, cache, baseline); });
    current = "eval";
    stage_eval(cfg, paths, baseline);
  } catch (const std::exception& e) {
    write_manifest(cfg, paths, runner.records, current, e.what());
    throw;
  }
  write_manifest(cfg, paths, runner.records, "", "");
  return paths.metrics();
}

std::vector<SweepRow> run_lambda_sweep(const ExperimentConfig& cfg,
                                       const StageCache& cache,
                                       const std::vector<double>& lambdas) {
  if (lambdas.empty()) throw UsageError("lambda sweep: empty lambda list");
  RunPaths paths{cfg.output_dir};
  fs::create_directories(paths.out);
  StageRunner runner{paths, cache};
  runner.run("data", data_key(cfg), kDataFiles,
             [&] { stage_data(cfg, paths, cache); });
  runner.run("phase1", phase1_key(cfg), kPhase1Files,
             [&] { stage_phase1(cfg, paths, cache); });
  runner.run("score", score_key(cfg), kScoreFiles,
             [&] { stage_score(cfg, paths, cache); });

  DatasetSplit split = load_dataset(paths.dataset());
  ParameterSet phase1 = load_checkpoint(paths.phase1_stem());
  ScoreNet net = load_score_net(cfg, paths);
  Eigen::MatrixXd reps = gin_forward_batch(cfg.gin, phase1, split.train);
  FactorPair train_factors = encode(cfg.dis, phase1, reps);
  Eigen::RowVectorXd centroid_c = train_factors.semantic.colwise().mean();
  Eigen::RowVectorXd centroid_s = train_factors.style.colwise().mean();
  Eigen::MatrixXd train_cat(reps.rows(), cfg.dis.d1 + cfg.dis.d2);
  train_cat << train_factors.semantic, train_factors.style;

  int n = cfg.pseudo_count > 0 ? cfg.pseudo_count
                               : static_cast<int>(split.train.size());
  std::vector<SweepRow> rows;
  for (size_t i = 0; i < lambdas.size(); ++i) {
    PerturbationConfig pcfg;
    pcfg.lambda_c = lambdas[i];
    pcfg.lambda_s = lambdas[i];
    pcfg.num_samples = n;
    // one shared stream so rows differ only in lambda, not in noise
    pcfg.seed = mix_seed(cfg.seed, kStreamSweep);
    FactorPair fp = reverse_sample(net, cfg.schedule, pcfg);
    SweepRow row;
    row.lambda = lambdas[i];
    row.mean_distance_c =
        (fp.semantic.rowwise() - centroid_c).rowwise().norm().mean();
    row.mean_distance_s =
        (fp.style.rowwise() - centroid_s).rowwise().norm().mean();
    rows.push_back(row);

    Eigen::MatrixXd sampled(fp.semantic.rows(), cfg.dis.d1 + cfg.dis.d2);
    sampled << fp.semantic, fp.style;
    std::vector<std::pair<Eigen::MatrixXd, std::string>> groups;
    groups.emplace_back(train_cat, "original");
    groups.emplace_back(std::move(sampled), "sampled");
    write_projection_csv(project_2d(groups), paths.sweep_projection(i));
  }

  std::ofstream out(paths.sweep());
  if (!out) throw IoError("cannot write sweep table: " + paths.sweep().string());
  out << "lambda,mean_distance_c,mean_distance_s\n";
  for (const SweepRow& r : rows)
    out << r.lambda << "," << r.mean_distance_c << "," << r.mean_distance_s
        << "\n";
  return rows;
}

json run_seeds(const ExperimentConfig& cfg, const StageCache& cache,
               bool baseline) {
  std::vector<uint64_t> seeds = cfg.seeds.empty()
                                    ? std::vector<uint64_t>{cfg.seed}
                                    : cfg.seeds;
  if (seeds.size() == 1) {
    ExperimentConfig one = cfg;
    one.seed = seeds[0];
    run_pipeline(one, cache, baseline);
    RunPaths paths{one.output_dir};
    std::ifstream in(paths.metrics());
    return json::parse(in);
  }

  std::vector<json> reports;
  for (uint64_t s : seeds) {
    ExperimentConfig sub = cfg;
    sub.seed = s;
    sub.output_dir =
        (fs::path(cfg.output_dir) / ("seed_" + std::to_string(s))).string();
    run_pipeline(sub, cache, baseline);
    RunPaths paths{sub.output_dir};
    std::ifstream in(paths.metrics());
    reports.push_back(json::parse(in));
  }

  auto aggregate = [&](const char* field) {
    std::vector<double> vals;
    for (const json& r : reports) vals.push_back(r.at(field).get<double>());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(vals.size() - 1);  // sample variance
    return json{{"mean", mean}, {"std", std::sqrt(var)}, {"values", vals}};
  };

  json agg;
  agg["method"] = baseline ? "energy_baseline" : "gdda";
  agg["ablation"] = cfg.ablation;
  agg["config_hash"] = cfg.config_hash;
  agg["seeds"] = seeds;
  agg["auroc"] = aggregate("auroc");
  agg["aupr"] = aggregate("aupr");
  agg["fpr95"] = aggregate("fpr95");
  agg["ind_acc"] = aggregate("ind_acc");
  std::ofstream out(fs::path(cfg.output_dir) / "aggregate.json");
  if (!out) throw IoError("cannot write aggregate report");
  out << agg.dump(2) << "\n";
  return agg;
}

}  // namespace gdda
