#pragma once

#include <vector>

#include "gdda/gin.hpp"
#include "gdda/params.hpp"

namespace gdda {

// Phase-1 factorization: representations h (width d) split into a semantic
// factor c (width d1) and a style factor s (width d2) by two encoders, with
// a decoder mapping c++s back to representation space and a linear head phi
// scoring class logits for the similarity/classification losses.
struct DisentanglerConfig {
  int d = 16;        // representation width
  int d1 = 8;        // semantic width
  int d2 = 8;        // style width
  int hidden = 16;   // encoder/decoder hidden width; 0 = single affine
  int num_classes = 3;
  double beta1 = 1.0;  // weight of the similarity (KL) loss
  double beta2 = 1.0;  // weight of the classification loss

  void validate() const;
};

// Sections: enc_c, enc_s, dec, phi.
ParameterSet disentangler_init(const DisentanglerConfig& cfg, Rng& rng);

struct FactorPair {
  Eigen::MatrixXd semantic;  // rows x d1
  Eigen::MatrixXd style;     // rows x d2
};

// c = E_c(h), s = E_s(h); h may hold one row per sample.
FactorPair encode(const DisentanglerConfig& cfg, const ParameterSet& params,
                  const Eigen::MatrixXd& h);

// h_re = D(c ++ s).
Eigen::MatrixXd decode(const DisentanglerConfig& cfg, const ParameterSet& params,
                       const Eigen::MatrixXd& semantic,
                       const Eigen::MatrixXd& style);

// Alternative style draws, one standard-normal row per sample.
Eigen::MatrixXd style_resample(int rows, int d2, Rng& rng);

struct Phase1Losses {
  double recon = 0.0;
  double sim = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

// Loss of one representation/label pair; the style replacement s' is drawn
// from rng. The _with_style variant takes s' explicitly so tests can force
// s' = s or probe fixed draws.
Phase1Losses phase1_losses(const DisentanglerConfig& cfg,
                           const ParameterSet& params, const Eigen::MatrixXd& h,
                           int label, Rng& rng);
Phase1Losses phase1_losses_with_style(const DisentanglerConfig& cfg,
                                      const ParameterSet& params,
                                      const Eigen::MatrixXd& h, int label,
                                      const Eigen::MatrixXd& style_prime);

// Tape builder shared by the loss functions and the trainers: batch rows of
// h with fixed style draws, returning the four loss components as tape nodes.
struct Phase1Vars {
  ad::Var recon, sim, cls, total;
};
Phase1Vars phase1_losses_t(ad::Tape& tape, const ParamVars& pv,
                           const DisentanglerConfig& cfg, ad::Var h,
                           const std::vector<int>& labels,
                           const Eigen::MatrixXd& style_prime);

struct Phase1TrainOptions {
  int epochs = 200;
  double lr = 1e-3;
};

struct EpochLog {
  std::vector<Phase1Losses> rows;
};

// Trains encoders/decoder/phi on fixed representations (one row per sample).
EpochLog train_phase1(const DisentanglerConfig& cfg, ParameterSet& params,
                      const Eigen::MatrixXd& reps,
                      const std::vector<int>& labels,
                      const Phase1TrainOptions& opts, Rng& rng);

// Joint phase-1 training: the GIN backbone and the disentangler are trained
// together on graphs, gradients flowing through the pooled representations.
// `params` holds both the gin.* and disentangler sections.
EpochLog train_phase1_joint(const GinConfig& gin_cfg,
                            const DisentanglerConfig& cfg,
                            ParameterSet& params,
                            const std::vector<GraphInstance>& graphs,
                            const std::vector<int>& labels,
                            const Phase1TrainOptions& opts, Rng& rng);

void write_phase1_log(const EpochLog& log, const std::filesystem::path& path);

}  // namespace gdda
