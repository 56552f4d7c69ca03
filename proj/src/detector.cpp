#include "gdda/detector.hpp"

#include <algorithm>
#include <fstream>

using json = nlohmann::json;

namespace gdda {

void EnergyConfig::validate() const {
  if (!(temperature > 0.0))
    throw ConfigError("energy: temperature must be positive");
  if (!(m_in < m_ood)) throw ConfigError("energy: need m_in < m_ood");
  if (lambda_weight < 0.0)
    throw ConfigError("energy: lambda_weight must be nonnegative");
}

double energy(const Eigen::RowVectorXd& logits, double temperature) {
  if (logits.size() == 0) throw UsageError("energy: empty logit vector");
  double m = logits.maxCoeff() / temperature;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    acc += std::exp(logits(i) / temperature - m);
  return -temperature * (m + std::log(acc));
}

Eigen::VectorXd energy_rows(const Eigen::MatrixXd& logits, double temperature) {
  Eigen::VectorXd out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    out(i) = energy(logits.row(i), temperature);
  return out;
}

ad::Var energy_rows_t(ad::Tape& tape, ad::Var logits, double temperature) {
  ad::Var lse = tape.logsumexp_rows(tape.scale(logits, 1.0 / temperature));
  return tape.scale(lse, -temperature);
}

namespace {

// mean over rows of ReLU(E - m_in)^2 resp. ReLU(m_ood - E)^2.
double margin_term(const Eigen::VectorXd& energies, double margin, bool ood) {
  if (energies.size() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < energies.size(); ++i) {
    double v = ood ? margin - energies(i) : energies(i) - margin;
    if (v > 0.0) acc += v * v;
  }
  return acc / static_cast<double>(energies.size());
}

ad::Var margin_term_t(ad::Tape& tape, ad::Var energies, double margin,
                      bool ood) {
  Eigen::Index n = tape.value(energies).rows();
  ad::Var v = ood ? tape.add_scalar(tape.neg(energies), margin)
                  : tape.add_scalar(energies, -margin);
  return tape.scale(tape.sum_sq(tape.relu(v)), 1.0 / static_cast<double>(n));
}

}  // namespace

double energy_margin_loss(const ParameterSet& params, const MlpSpec& head_spec,
                          const EnergyConfig& cfg,
                          const Eigen::MatrixXd& ind_reps,
                          const Eigen::MatrixXd& ood_reps) {
  cfg.validate();
  if (ind_reps.rows() == 0 && ood_reps.rows() == 0)
    throw UsageError("energy_margin_loss: both pools are empty");
  double loss = 0.0;
  if (ind_reps.rows() > 0)
    loss += margin_term(
        energy_rows(classify_head(params, head_spec, ind_reps), cfg.temperature),
        cfg.m_in, false);
  if (ood_reps.rows() > 0)
    loss += margin_term(
        energy_rows(classify_head(params, head_spec, ood_reps), cfg.temperature),
        cfg.m_ood, true);
  return loss;
}

double combine_minmax(const std::vector<double>& domain_ce, double energy_loss,
                      double lambda_weight, int* argmax_domain) {
  if (domain_ce.empty()) throw UsageError("minmax: no domain losses");
  int arg = 0;
  for (size_t i = 1; i < domain_ce.size(); ++i)
    if (domain_ce[i] > domain_ce[arg]) arg = static_cast<int>(i);
  if (argmax_domain) *argmax_domain = arg;
  return domain_ce[arg] + lambda_weight * energy_loss;
}

MinmaxParts minmax_objective_t(ad::Tape& tape, const ParamVars& pv,
                               const MlpSpec& head_spec, const EnergyConfig& cfg,
                               const std::vector<ad::Var>& domain_reps,
                               const std::vector<std::vector<int>>& domain_labels,
                               const Eigen::MatrixXd& pseudo_ind,
                               const Eigen::MatrixXd& pseudo_ood) {
  cfg.validate();
  if (domain_reps.empty()) throw UsageError("minmax: no training domains");
  if (domain_reps.size() != domain_labels.size())
    throw UsageError("minmax: domain representation/label count mismatch");

  MinmaxParts parts;
  std::vector<ad::Var> ce;
  ce.reserve(domain_reps.size());
  for (size_t i = 0; i < domain_reps.size(); ++i) {
    if (domain_labels[i].empty())
      throw UsageError("minmax: empty batch for domain index " +
                       std::to_string(i));
    ad::Var logits = classify_head_t(tape, pv, head_spec, domain_reps[i]);
    ce.push_back(tape.ce_mean(logits, domain_labels[i]));
    parts.domain_ce.push_back(tape.scalar(ce.back()));
  }
  parts.max_ce = tape.max_of(ce, &parts.argmax_domain);

  // Energy pools: InD = pseudo-InD plus the worst domain's originals
  // (gradient flows into the backbone when those rows are tape-valued).
  std::vector<ad::Var> ind_rows;
  if (pseudo_ind.rows() > 0) ind_rows.push_back(tape.constant(pseudo_ind));
  ind_rows.push_back(domain_reps[parts.argmax_domain]);
  ad::Var ind_pool = ind_rows.size() == 1 ? ind_rows[0] : tape.vcat(ind_rows);

  ad::Var e_loss = margin_term_t(
      tape, energy_rows_t(tape, classify_head_t(tape, pv, head_spec, ind_pool),
                          cfg.temperature),
      cfg.m_in, false);
  if (pseudo_ood.rows() > 0) {
    ad::Var ood_logits =
        classify_head_t(tape, pv, head_spec, tape.constant(pseudo_ood));
    e_loss = tape.add(
        e_loss, margin_term_t(tape, energy_rows_t(tape, ood_logits,
                                                  cfg.temperature),
                              cfg.m_ood, true));
  }
  parts.energy_loss = e_loss;
  parts.objective =
      tape.add(parts.max_ce, tape.scale(e_loss, cfg.lambda_weight));
  return parts;
}

namespace {

std::vector<ad::Var> build_domain_reps(ad::Tape& tape, const ParamVars& pv,
                                       const GinConfig& gin_cfg,
                                       const DomainBatches& batches,
                                       bool through_backbone,
                                       const ParameterSet& params) {
  std::vector<ad::Var> reps;
  reps.reserve(batches.size());
  for (const auto& [domain, batch] : batches) {
    if (batch.graphs.empty())
      throw UsageError("minmax: empty batch for domain " +
                       std::to_string(domain));
    if (through_backbone) {
      std::vector<ad::Var> rows;
      rows.reserve(batch.graphs.size());
      for (const GraphInstance& g : batch.graphs)
        rows.push_back(gin_forward_t(gin_cfg, tape, pv, g));
      reps.push_back(tape.vcat(rows));
    } else {
      reps.push_back(
          tape.constant(gin_forward_batch(gin_cfg, params, batch.graphs)));
    }
  }
  return reps;
}

std::vector<std::vector<int>> collect_labels(const DomainBatches& batches) {
  std::vector<std::vector<int>> labels;
  labels.reserve(batches.size());
  for (const auto& [domain, batch] : batches) labels.push_back(batch.labels);
  return labels;
}

}  // namespace

double minmax_objective(const GinConfig& gin_cfg, const MlpSpec& head_spec,
                        const EnergyConfig& cfg, const ParameterSet& params,
                        const DomainBatches& batches,
                        const Eigen::MatrixXd& pseudo_ind,
                        const Eigen::MatrixXd& pseudo_ood) {
  ad::Tape tape;
  ParamVars pv = register_params(tape, params);
  std::vector<ad::Var> reps =
      build_domain_reps(tape, pv, gin_cfg, batches, true, params);
  MinmaxParts parts = minmax_objective_t(tape, pv, head_spec, cfg, reps,
                                         collect_labels(batches), pseudo_ind,
                                         pseudo_ood);
  return tape.scalar(parts.objective);
}

DetectorLog train_detector(DetectorModel& model, const DomainBatches& batches,
                           const Eigen::MatrixXd& pseudo_ind,
                           const Eigen::MatrixXd& pseudo_ood,
                           const DetectorTrainOptions& opts, Rng& rng) {
  (void)rng;  // training is deterministic given the initial parameters
  model.energy.validate();
  model.gin.validate();
  if (batches.empty()) throw UsageError("train_detector: no training domains");

  // With a frozen backbone the graphs only need one forward pass; the tape
  // then covers the head alone.
  ParameterSet backbone = model.params.section("gin.");
  ParameterSet head = model.params.section("head.");
  ParameterSet& trainable = opts.train_backbone ? model.params : head;

  std::vector<Eigen::MatrixXd> frozen_reps;
  if (!opts.train_backbone)
    for (const auto& [domain, batch] : batches)
      frozen_reps.push_back(
          gin_forward_batch(model.gin, model.params, batch.graphs));

  std::vector<std::vector<int>> labels = collect_labels(batches);
  DetectorLog log;
  AdamOptimizer opt(opts.lr);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    ad::Tape tape;
    ParamVars pv = register_params(tape, trainable);
    std::vector<ad::Var> reps;
    if (opts.train_backbone) {
      reps = build_domain_reps(tape, pv, model.gin, batches, true, trainable);
    } else {
      reps.reserve(frozen_reps.size());
      for (const Eigen::MatrixXd& r : frozen_reps)
        reps.push_back(tape.constant(r));
    }
    MinmaxParts parts = minmax_objective_t(tape, pv, model.head, model.energy,
                                           reps, labels, pseudo_ind, pseudo_ood);
    DetectorEpoch row;
    row.objective = tape.scalar(parts.objective);
    row.max_ce = tape.scalar(parts.max_ce);
    row.energy_loss = tape.scalar(parts.energy_loss);
    row.argmax_domain = parts.argmax_domain;
    if (!std::isfinite(row.objective))
      throw NumericError("detector training diverged at epoch " +
                         std::to_string(epoch));
    log.rows.push_back(row);
    tape.backward(parts.objective);
    opt.step(trainable, extract_grads(tape, pv, trainable));
  }
  if (!opts.train_backbone) {
    ParameterSet merged = backbone;
    merged.merge(head);
    model.params = std::move(merged);
  }
  model.params.check_finite("detector parameters");

  // Threshold: nearest-rank 95th percentile of training InD energies, so
  // roughly 95% of the training set sits below the OOD cutoff.
  std::vector<double> energies;
  for (const auto& [domain, batch] : batches)
    for (const GraphInstance& g : batch.graphs) {
      Eigen::MatrixXd h = gin_forward(model.gin, model.params, g);
      energies.push_back(
          energy(classify_head(model.params, model.head, h).row(0),
                 model.energy.temperature));
    }
  std::sort(energies.begin(), energies.end());
  size_t rank = static_cast<size_t>(
      std::ceil(0.95 * static_cast<double>(energies.size())));
  model.energy.threshold = energies[std::min(rank, energies.size()) - 1];
  return log;
}

DetectionResult detect(const DetectorModel& model, const GraphInstance& g) {
  if (!model.energy.fitted())
    throw UsageError("detect: detector threshold has not been fitted");
  DetectionResult res;
  Eigen::MatrixXd h = gin_forward(model.gin, model.params, g);
  res.logits = classify_head(model.params, model.head, h).row(0);
  res.energy = energy(res.logits, model.energy.temperature);
  res.is_ood = res.energy >= model.energy.threshold;
  res.logits.maxCoeff(&res.predicted_class);
  return res;
}

void save_detector(const DetectorModel& model, const std::string& stem) {
  json meta;
  meta["gin"] = {{"d_in", model.gin.d_in},
                 {"hidden", model.gin.hidden},
                 {"d_out", model.gin.d_out},
                 {"num_layers", model.gin.num_layers},
                 {"eps", model.gin.eps},
                 {"mean_readout", model.gin.mean_readout}};
  meta["head"] = {{"in", model.head.in},
                  {"hidden", model.head.hidden},
                  {"out", model.head.out},
                  {"tanh_hidden", model.head.tanh_hidden}};
  save_checkpoint(stem, model.params, meta);
  json sidecar;
  sidecar["temperature"] = model.energy.temperature;
  sidecar["m_in"] = model.energy.m_in;
  sidecar["m_ood"] = model.energy.m_ood;
  sidecar["lambda_weight"] = model.energy.lambda_weight;
  // json has no NaN literal; an unfitted threshold round-trips as null
  sidecar["threshold"] =
      model.energy.fitted() ? json(model.energy.threshold) : json();
  std::ofstream out(stem + "_energy.json");
  if (!out) throw IoError("cannot write energy sidecar for " + stem);
  out << sidecar.dump(2) << "\n";
}

DetectorModel load_detector(const std::string& stem) {
  DetectorModel model;
  json meta;
  model.params = load_checkpoint(stem, &meta);
  const json& g = meta.at("gin");
  model.gin.d_in = g.at("d_in").get<int>();
  model.gin.hidden = g.at("hidden").get<int>();
  model.gin.d_out = g.at("d_out").get<int>();
  model.gin.num_layers = g.at("num_layers").get<int>();
  model.gin.eps = g.at("eps").get<double>();
  model.gin.mean_readout = g.at("mean_readout").get<bool>();
  const json& h = meta.at("head");
  model.head.in = h.at("in").get<int>();
  model.head.hidden = h.at("hidden").get<int>();
  model.head.out = h.at("out").get<int>();
  model.head.tanh_hidden = h.value("tanh_hidden", false);

  std::ifstream in(stem + "_energy.json");
  if (!in)
    throw MissingArtifactError("missing energy sidecar: " + stem +
                               "_energy.json");
  json sidecar = json::parse(in, nullptr, false);
  if (sidecar.is_discarded())
    throw IoError("malformed energy sidecar: " + stem + "_energy.json");
  model.energy.temperature = sidecar.at("temperature").get<double>();
  model.energy.m_in = sidecar.at("m_in").get<double>();
  model.energy.m_ood = sidecar.at("m_ood").get<double>();
  model.energy.lambda_weight = sidecar.at("lambda_weight").get<double>();
  model.energy.threshold =
      sidecar.at("threshold").is_null()
          ? std::numeric_limits<double>::quiet_NaN()
          : sidecar.at("threshold").get<double>();
  return model;
}

void write_detector_log(const DetectorLog& log,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "epoch,objective,max_ce,energy_loss,argmax_domain\n";
  for (size_t i = 0; i < log.rows.size(); ++i) {
    const DetectorEpoch& r = log.rows[i];
    out << i << "," << r.objective << "," << r.max_ce << "," << r.energy_loss
        << "," << r.argmax_domain << "\n";
  }
}

}  // namespace gdda
