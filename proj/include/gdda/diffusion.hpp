#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "gdda/disentangler.hpp"
#include "gdda/params.hpp"

namespace gdda {

// Variance-preserving forward SDE with a linear beta schedule:
//   beta(t) = beta_min + t (beta_max - beta_min),  t in [0, T]
//   alpha(t) = exp(-1/2 int_0^t beta),  sigma(t) = sqrt(1 - alpha^2)
struct DiffusionSchedule {
  double beta_min = 0.1;
  double beta_max = 20.0;
  double T = 1.0;
  int num_steps = 200;

  void validate() const;
  double beta(double t) const;
  double alpha(double t) const;
  double sigma(double t) const;
};

// Sinusoidal clock features fed to the score net: sin(2^k t) for k = 0..7
// followed by cos(2^k t).
constexpr int kTimeEmbedDim = 16;
Eigen::RowVectorXd time_embedding(double t);

// Joint score network over both factors: shared trunk on (c_t, s_t, emb(t)),
// one output head per factor.
struct ScoreNetConfig {
  int d1 = 8;
  int d2 = 8;
  int hidden = 64;

  void validate() const;
};

struct ScoreNet {
  ScoreNetConfig cfg;
  ParameterSet params;
  bool trained = false;
};

ScoreNet score_net_init(const ScoreNetConfig& cfg, Rng& rng);

// Score estimates for a batch of perturbed factors; ts holds one time per
// row. Returns (score_c: N x d1, score_s: N x d2).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> score_forward(
    const ScoreNet& net, const Eigen::MatrixXd& c_t, const Eigen::MatrixXd& s_t,
    const Eigen::VectorXd& ts);
std::pair<ad::Var, ad::Var> score_forward_t(ad::Tape& tape, const ParamVars& pv,
                                            const ScoreNetConfig& cfg,
                                            ad::Var c_t, ad::Var s_t,
                                            const Eigen::VectorXd& ts);

// Closed-form VP marginal draw: x_t = alpha(t) x0 + sigma(t) eps.
struct Perturbed {
  Eigen::MatrixXd x_t;
  Eigen::MatrixXd noise;
};
Perturbed forward_perturb(const DiffusionSchedule& sched,
                          const Eigen::MatrixXd& x0, double t, Rng& rng);

// All randomness of one denoising-score-matching evaluation, drawn up front
// so a fixed batch can be replayed against finite differences. Per item i:
// t_i ~ U(0, T], then the noise rows for c and s.
struct DsmBatch {
  Eigen::VectorXd ts;
  Eigen::VectorXd sigmas;
  Eigen::MatrixXd c_t, s_t;
  Eigen::MatrixXd eps_c, eps_s;
};
DsmBatch make_dsm_batch(const DiffusionSchedule& sched, const Eigen::MatrixXd& c0,
                        const Eigen::MatrixXd& s0, Rng& rng);

// Mean over the batch of
//   | sigma(t) score_c + eps_c |^2 + | sigma(t) score_s + eps_s |^2,
// the sigma^2-weighted denoising score-matching objective.
ad::Var dsm_loss_t(ad::Tape& tape, const ParamVars& pv, const ScoreNetConfig& cfg,
                   const DsmBatch& batch);
double dsm_loss(const ScoreNet& net, const DiffusionSchedule& sched,
                const Eigen::MatrixXd& c0, const Eigen::MatrixXd& s0, Rng& rng);

struct ScoreTrainOptions {
  int epochs = 2000;
  double lr = 1e-3;
  int batch_size = 0;  // 0 = full batch
};

// Minimizes dsm_loss over fresh perturbation draws each step; marks the net
// trained. Returns the per-step loss log.
std::vector<double> train_score(ScoreNet& net, const DiffusionSchedule& sched,
                                const Eigen::MatrixXd& c0,
                                const Eigen::MatrixXd& s0,
                                const ScoreTrainOptions& opts, Rng& rng);

// Shift-controlled reverse sampling. lambda_c / lambda_s attenuate the score
// of the matching factor by (1 - lambda): 0 reproduces the data distribution,
// 1 removes the data attraction entirely.
struct PerturbationConfig {
  double lambda_c = 0.0;
  double lambda_s = 0.4;
  int num_samples = 0;
  uint64_t seed = 0;

  void validate() const;
};

// Euler-Maruyama integration of the coupled reverse SDE from t = T to 0.
// Trajectory i draws from make_rng(mix_seed(cfg.seed, i)): first the c then
// the s initialization, then per step one noise row for c and one for s.
FactorPair reverse_sample(const ScoreNet& net, const DiffusionSchedule& sched,
                          const PerturbationConfig& pcfg);

// Decodes shift-controlled factor samples into pseudo representations:
// one run with lambda_c = 0 (semantic kept in-distribution), one with
// lambda_c = lambda_c_ood. Returns (pseudo_ind, pseudo_ood), n rows each.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate_pseudo(
    const ScoreNet& net, const DiffusionSchedule& sched,
    const DisentanglerConfig& dis_cfg, const ParameterSet& dis_params,
    double lambda_c_ood, double lambda_s, int n, uint64_t seed);

struct PseudoSets {
  Eigen::MatrixXd ind;  // n x d
  Eigen::MatrixXd ood;  // n x d
  double lambda_c = 0.0;
  double lambda_s = 0.0;
};

void save_pseudo(const PseudoSets& sets, const std::filesystem::path& path);
PseudoSets load_pseudo(const std::filesystem::path& path);

void write_loss_log(const std::vector<double>& losses,
                    const std::filesystem::path& path);

}  // namespace gdda
