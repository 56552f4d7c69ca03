#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "gdda/checkpoint.hpp"
#include "gdda/gin.hpp"

namespace gdda {

// Energy scoring and margin settings. threshold is NaN until a detector has
// been fitted; is_ood compares energy >= threshold.
struct EnergyConfig {
  double temperature = 1.0;
  double m_in = -7.0;
  double m_ood = -2.0;
  double lambda_weight = 0.1;
  double threshold = std::numeric_limits<double>::quiet_NaN();

  void validate() const;
  bool fitted() const { return std::isfinite(threshold); }
};

// E(z) = -T log sum_i exp(z_i / T), max-subtracted for stability.
double energy(const Eigen::RowVectorXd& logits, double temperature);
Eigen::VectorXd energy_rows(const Eigen::MatrixXd& logits, double temperature);
ad::Var energy_rows_t(ad::Tape& tape, ad::Var logits, double temperature);

// Squared hinge pushing InD energies below m_in and OOD energies above
// m_ood; an empty side contributes zero, both sides empty is a usage error.
// Representations feed the classification head directly.
double energy_margin_loss(const ParameterSet& params, const MlpSpec& head_spec,
                          const EnergyConfig& cfg,
                          const Eigen::MatrixXd& ind_reps,
                          const Eigen::MatrixXd& ood_reps);

// Scalar assembly of the min-max objective: worst-domain cross-entropy (ties
// resolved to the lowest domain index) plus lambda times the energy loss.
double combine_minmax(const std::vector<double>& domain_ce, double energy_loss,
                      double lambda_weight, int* argmax_domain = nullptr);

// Tape builder. domain_reps/domain_labels are ordered by ascending domain id;
// each entry holds the stacked representations of one training domain. The
// energy InD pool is pseudo_ind plus the worst-domain originals; the OOD pool
// is pseudo_ood. Either pseudo set may be empty (the ablation paths).
struct MinmaxParts {
  ad::Var objective;
  ad::Var max_ce;
  ad::Var energy_loss;  // invalid when no energy term was built
  int argmax_domain = 0;
  std::vector<double> domain_ce;
};
MinmaxParts minmax_objective_t(ad::Tape& tape, const ParamVars& pv,
                               const MlpSpec& head_spec, const EnergyConfig& cfg,
                               const std::vector<ad::Var>& domain_reps,
                               const std::vector<std::vector<int>>& domain_labels,
                               const Eigen::MatrixXd& pseudo_ind,
                               const Eigen::MatrixXd& pseudo_ood);

struct DomainBatch {
  std::vector<GraphInstance> graphs;
  std::vector<int> labels;  // already mapped to head output indices
};
using DomainBatches = std::map<int, DomainBatch>;

// Plain evaluation of the objective at the current parameters (params holds
// gin.* and head.* sections).
double minmax_objective(const GinConfig& gin_cfg, const MlpSpec& head_spec,
                        const EnergyConfig& cfg, const ParameterSet& params,
                        const DomainBatches& batches,
                        const Eigen::MatrixXd& pseudo_ind,
                        const Eigen::MatrixXd& pseudo_ood);

struct DetectorModel {
  GinConfig gin;
  MlpSpec head;  // in = gin.d_out, out = number of known classes
  EnergyConfig energy;
  ParameterSet params;  // sections gin.* and head.*
};

struct DetectorTrainOptions {
  int epochs = 300;
  double lr = 1e-3;
  bool train_backbone = false;  // default: frozen phase-1 backbone, head only
};

struct DetectorEpoch {
  double objective = 0.0;
  double max_ce = 0.0;
  double energy_loss = 0.0;
  int argmax_domain = 0;
};
struct DetectorLog {
  std::vector<DetectorEpoch> rows;
};

// Minimizes the min-max objective, then fits energy.threshold to the 95th
// percentile (nearest rank) of training InD energies. With epochs = 0 the
// parameters stay untouched but the threshold is still fitted.
DetectorLog train_detector(DetectorModel& model, const DomainBatches& batches,
                           const Eigen::MatrixXd& pseudo_ind,
                           const Eigen::MatrixXd& pseudo_ood,
                           const DetectorTrainOptions& opts, Rng& rng);

struct DetectionResult {
  Eigen::RowVectorXd logits;
  double energy = 0.0;
  bool is_ood = false;
  int predicted_class = 0;
};

DetectionResult detect(const DetectorModel& model, const GraphInstance& g);

void save_detector(const DetectorModel& model, const std::string& stem);
DetectorModel load_detector(const std::string& stem);

void write_detector_log(const DetectorLog& log,
                        const std::filesystem::path& path);

}  // namespace gdda
