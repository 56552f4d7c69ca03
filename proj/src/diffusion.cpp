#include "gdda/diffusion.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

using json = nlohmann::json;

namespace gdda {

void DiffusionSchedule::validate() const {
  if (!(beta_min > 0.0) || beta_min > beta_max)
    throw ConfigError("schedule: need 0 < beta_min <= beta_max");
  if (!(T > 0.0)) throw ConfigError("schedule: horizon must be positive");
  if (num_steps < 1) throw ConfigError("schedule: num_steps must be >= 1");
}

double DiffusionSchedule::beta(double t) const {
  return beta_min + t * (beta_max - beta_min);
}

double DiffusionSchedule::alpha(double t) const {
  double integral = beta_min * t + 0.5 * t * t * (beta_max - beta_min);
  return std::exp(-0.5 * integral);
}

double DiffusionSchedule::sigma(double t) const {
  double a = alpha(t);
  return std::sqrt(std::max(0.0, 1.0 - a * a));
}

Eigen::RowVectorXd time_embedding(double t) {
  Eigen::RowVectorXd emb(kTimeEmbedDim);
  for (int k = 0; k < kTimeEmbedDim / 2; ++k) {
    double freq = std::ldexp(1.0, k);  // 2^k
    emb(k) = std::sin(freq * t);
    emb(kTimeEmbedDim / 2 + k) = std::cos(freq * t);
  }
  return emb;
}

namespace {

MlpSpec trunk_spec(const ScoreNetConfig& cfg) {
  return {cfg.d1 + cfg.d2 + kTimeEmbedDim, cfg.hidden, cfg.hidden};
}
MlpSpec head_c_spec(const ScoreNetConfig& cfg) { return {cfg.hidden, 0, cfg.d1}; }
MlpSpec head_s_spec(const ScoreNetConfig& cfg) { return {cfg.hidden, 0, cfg.d2}; }

Eigen::MatrixXd embed_rows(const Eigen::VectorXd& ts) {
  Eigen::MatrixXd emb(ts.size(), kTimeEmbedDim);
  for (Eigen::Index i = 0; i < ts.size(); ++i)
    emb.row(i) = time_embedding(ts(i));
  return emb;
}

}  // namespace

void ScoreNetConfig::validate() const {
  if (d1 < 1 || d2 < 1) throw ConfigError("score net: factor widths must be >= 1");
  if (hidden < 1) throw ConfigError("score net: hidden width must be >= 1");
}

ScoreNet score_net_init(const ScoreNetConfig& cfg, Rng& rng) {
  cfg.validate();
  ScoreNet net;
  net.cfg = cfg;
  mlp_init(net.params, "score.trunk", trunk_spec(cfg), rng);
  mlp_init(net.params, "score.head_c", head_c_spec(cfg), rng);
  mlp_init(net.params, "score.head_s", head_s_spec(cfg), rng);
  return net;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> score_forward(
    const ScoreNet& net, const Eigen::MatrixXd& c_t, const Eigen::MatrixXd& s_t,
    const Eigen::VectorXd& ts) {
  if (c_t.rows() != s_t.rows() || c_t.rows() != ts.size())
    throw UsageError("score_forward: row counts disagree");
  Eigen::MatrixXd x(c_t.rows(), c_t.cols() + s_t.cols() + kTimeEmbedDim);
  x << c_t, s_t, embed_rows(ts);
  Eigen::MatrixXd trunk =
      mlp_forward(net.params, "score.trunk", trunk_spec(net.cfg), x)
          .cwiseMax(0.0);
  return {mlp_forward(net.params, "score.head_c", head_c_spec(net.cfg), trunk),
          mlp_forward(net.params, "score.head_s", head_s_spec(net.cfg), trunk)};
}

std::pair<ad::Var, ad::Var> score_forward_t(ad::Tape& tape, const ParamVars& pv,
                                            const ScoreNetConfig& cfg,
                                            ad::Var c_t, ad::Var s_t,
                                            const Eigen::VectorXd& ts) {
  ad::Var x = tape.hcat(tape.hcat(c_t, s_t), tape.constant(embed_rows(ts)));
  ad::Var trunk =
      tape.relu(mlp_forward_t(tape, pv, "score.trunk", trunk_spec(cfg), x));
  return {mlp_forward_t(tape, pv, "score.head_c", head_c_spec(cfg), trunk),
          mlp_forward_t(tape, pv, "score.head_s", head_s_spec(cfg), trunk)};
}

Perturbed forward_perturb(const DiffusionSchedule& sched,
                          const Eigen::MatrixXd& x0, double t, Rng& rng) {
  sched.validate();
  if (t < 0.0 || t > sched.T)
    throw UsageError("forward_perturb: t outside [0, T]");
  Perturbed out;
  out.noise = randn_matrix(rng, x0.rows(), x0.cols());
  out.x_t = sched.alpha(t) * x0 + sched.sigma(t) * out.noise;
  return out;
}

DsmBatch make_dsm_batch(const DiffusionSchedule& sched, const Eigen::MatrixXd& c0,
                        const Eigen::MatrixXd& s0, Rng& rng) {
  if (c0.rows() != s0.rows() || c0.rows() == 0)
    throw UsageError("dsm: factor batches must be nonempty and aligned");
  Eigen::Index n = c0.rows();
  DsmBatch b;
  b.ts.resize(n);
  b.sigmas.resize(n);
  b.c_t.resize(n, c0.cols());
  b.s_t.resize(n, s0.cols());
  b.eps_c.resize(n, c0.cols());
  b.eps_s.resize(n, s0.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    double t = sched.T * (1.0 - rand_uniform(rng));  // U(0, T]
    double a = sched.alpha(t);
    double sig = sched.sigma(t);
    b.ts(i) = t;
    b.sigmas(i) = sig;
    b.eps_c.row(i) = randn_matrix(rng, 1, c0.cols());
    b.eps_s.row(i) = randn_matrix(rng, 1, s0.cols());
    b.c_t.row(i) = a * c0.row(i) + sig * b.eps_c.row(i);
    b.s_t.row(i) = a * s0.row(i) + sig * b.eps_s.row(i);
  }
  return b;
}

ad::Var dsm_loss_t(ad::Tape& tape, const ParamVars& pv, const ScoreNetConfig& cfg,
                   const DsmBatch& batch) {
  Eigen::Index n = batch.ts.size();
  auto [score_c, score_s] =
      score_forward_t(tape, pv, cfg, tape.constant(batch.c_t),
                      tape.constant(batch.s_t), batch.ts);
  auto residual = [&](ad::Var score, const Eigen::MatrixXd& eps) {
    Eigen::MatrixXd sig =
        batch.sigmas.replicate(1, eps.cols());
    return tape.add(tape.hadamard(tape.constant(sig), score),
                    tape.constant(eps));
  };
  ad::Var loss = tape.add(tape.sum_sq(residual(score_c, batch.eps_c)),
                          tape.sum_sq(residual(score_s, batch.eps_s)));
  return tape.scale(loss, 1.0 / static_cast<double>(n));
}

double dsm_loss(const ScoreNet& net, const DiffusionSchedule& sched,
                const Eigen::MatrixXd& c0, const Eigen::MatrixXd& s0, Rng& rng) {
  sched.validate();
  DsmBatch batch = make_dsm_batch(sched, c0, s0, rng);
  ad::Tape tape;
  ParamVars pv = register_params(tape, net.params);
  double loss = tape.scalar(dsm_loss_t(tape, pv, net.cfg, batch));
  if (!std::isfinite(loss)) throw NumericError("dsm loss is non-finite");
  return loss;
}

std::vector<double> train_score(ScoreNet& net, const DiffusionSchedule& sched,
                                const Eigen::MatrixXd& c0,
                                const Eigen::MatrixXd& s0,
                                const ScoreTrainOptions& opts, Rng& rng) {
  sched.validate();
  net.cfg.validate();
  if (c0.rows() == 0) throw UsageError("train_score: empty factor set");
  if (c0.cols() != net.cfg.d1 || s0.cols() != net.cfg.d2)
    throw UsageError("train_score: factor widths do not match the net");
  std::vector<double> log;
  log.reserve(opts.epochs);
  AdamOptimizer opt(opts.lr);
  for (int step = 0; step < opts.epochs; ++step) {
    Eigen::MatrixXd cb = c0, sb = s0;
    if (opts.batch_size > 0 && opts.batch_size < c0.rows()) {
      cb.resize(opts.batch_size, c0.cols());
      sb.resize(opts.batch_size, s0.cols());
      for (int i = 0; i < opts.batch_size; ++i) {
        int j = rand_int(rng, 0, static_cast<int>(c0.rows()) - 1);
        cb.row(i) = c0.row(j);
        sb.row(i) = s0.row(j);
      }
    }
    DsmBatch batch = make_dsm_batch(sched, cb, sb, rng);
    LossGrads lg;
    try {
      lg = loss_and_gradients(
          [&](ad::Tape& tape, const ParamVars& pv) {
            return dsm_loss_t(tape, pv, net.cfg, batch);
          },
          net.params);
    } catch (const NumericError&) {
      throw NumericError("score training diverged at step " +
                         std::to_string(step));
    }
    log.push_back(lg.loss);
    opt.step(net.params, lg.grads);
  }
  net.params.check_finite("score net parameters");
  net.trained = true;
  return log;
}

void PerturbationConfig::validate() const {
  if (lambda_c < 0.0 || lambda_c > 1.0 || lambda_s < 0.0 || lambda_s > 1.0)
    throw ConfigError("perturbation: lambdas must lie in [0, 1]");
  if (num_samples < 0) throw ConfigError("perturbation: negative sample count");
}

FactorPair reverse_sample(const ScoreNet& net, const DiffusionSchedule& sched,
                          const PerturbationConfig& pcfg) {
  sched.validate();
  pcfg.validate();
  if (!net.trained)
    throw UsageError("reverse_sample: score net has not been trained");
  int n = pcfg.num_samples;
  int d1 = net.cfg.d1, d2 = net.cfg.d2;
  FactorPair out;
  out.semantic.resize(n, d1);
  out.style.resize(n, d2);
  if (n == 0) return out;

  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (int i = 0; i < n; ++i) {
    rngs.push_back(make_rng(mix_seed(pcfg.seed, static_cast<uint64_t>(i))));
    out.semantic.row(i) = randn_matrix(rngs[i], 1, d1);
    out.style.row(i) = randn_matrix(rngs[i], 1, d2);
  }

  double dt = sched.T / sched.num_steps;
  for (int k = 0; k < sched.num_steps; ++k) {
    double t = sched.T - k * dt;
    double bt = sched.beta(t);
    Eigen::VectorXd ts = Eigen::VectorXd::Constant(n, t);
    auto [score_c, score_s] = score_forward(net, out.semantic, out.style, ts);
    Eigen::MatrixXd z_c(n, d1), z_s(n, d2);
    for (int i = 0; i < n; ++i) {
      z_c.row(i) = randn_matrix(rngs[i], 1, d1);
      z_s.row(i) = randn_matrix(rngs[i], 1, d2);
    }
    double gdt = std::sqrt(bt * dt);
    out.semantic +=
        dt * (0.5 * bt * out.semantic + (1.0 - pcfg.lambda_c) * bt * score_c) +
        gdt * z_c;
    out.style +=
        dt * (0.5 * bt * out.style + (1.0 - pcfg.lambda_s) * bt * score_s) +
        gdt * z_s;
    if (!out.semantic.allFinite() || !out.style.allFinite())
      throw NumericError("reverse sampling diverged at step " +
                         std::to_string(k));
  }
  return out;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> generate_pseudo(
    const ScoreNet& net, const DiffusionSchedule& sched,
    const DisentanglerConfig& dis_cfg, const ParameterSet& dis_params,
    double lambda_c_ood, double lambda_s, int n, uint64_t seed) {
  if (!(lambda_c_ood > 0.0))
    throw ConfigError("generate_pseudo: the semantic shift lambda_c must be > 0");
  if (!(lambda_s > 0.0))
    throw ConfigError("generate_pseudo: the style shift lambda_s must be > 0");
  PerturbationConfig ind_cfg;
  ind_cfg.lambda_c = 0.0;
  ind_cfg.lambda_s = lambda_s;
  ind_cfg.num_samples = n;
  ind_cfg.seed = mix_seed(seed, 0);
  PerturbationConfig ood_cfg = ind_cfg;
  ood_cfg.lambda_c = lambda_c_ood;
  ood_cfg.seed = mix_seed(seed, 1);

  FactorPair ind = reverse_sample(net, sched, ind_cfg);
  FactorPair ood = reverse_sample(net, sched, ood_cfg);
  if (n == 0)
    return {Eigen::MatrixXd(0, dis_cfg.d), Eigen::MatrixXd(0, dis_cfg.d)};
  return {decode(dis_cfg, dis_params, ind.semantic, ind.style),
          decode(dis_cfg, dis_params, ood.semantic, ood.style)};
}

namespace {

void dump_rows(std::ofstream& out, const Eigen::MatrixXd& reps,
               const char* kind, double lambda_c, double lambda_s) {
  for (Eigen::Index i = 0; i < reps.rows(); ++i) {
    json row;
    row["kind"] = kind;
    row["lambda_c"] = lambda_c;
    row["lambda_s"] = lambda_s;
    json vals = json::array();
    for (Eigen::Index j = 0; j < reps.cols(); ++j) vals.push_back(reps(i, j));
    row["values"] = std::move(vals);
    out << row.dump() << "\n";
  }
}

}  // namespace

void save_pseudo(const PseudoSets& sets, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pseudo reps: " + path.string());
  dump_rows(out, sets.ind, "pseudo_ind", 0.0, sets.lambda_s);
  dump_rows(out, sets.ood, "pseudo_ood", sets.lambda_c, sets.lambda_s);
  if (!out) throw IoError("short write to " + path.string());
}

PseudoSets load_pseudo(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing pseudo reps: " + path.string());
  std::vector<Eigen::RowVectorXd> ind, ood;
  PseudoSets sets;
  std::string line;
  int line_no = 0;
  Eigen::Index width = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json row = json::parse(line);
      const json& vals = row.at("values");
      Eigen::RowVectorXd v(vals.size());
      for (size_t j = 0; j < vals.size(); ++j) v(j) = vals.at(j).get<double>();
      if (width < 0) width = v.size();
      if (v.size() != width)
        throw IoError("pseudo reps " + path.string() + " line " +
                      std::to_string(line_no) +
                      ": inconsistent representation width");
      std::string kind = row.at("kind").get<std::string>();
      if (kind == "pseudo_ind") {
        ind.push_back(std::move(v));
      } else if (kind == "pseudo_ood") {
        sets.lambda_c = row.at("lambda_c").get<double>();
        ood.push_back(std::move(v));
      } else {
        throw IoError("pseudo reps " + path.string() + " line " +
                      std::to_string(line_no) + ": unknown kind: " + kind);
      }
      sets.lambda_s = row.at("lambda_s").get<double>();
    } catch (const json::exception& e) {
      throw IoError("pseudo reps " + path.string() + " line " +
                    std::to_string(line_no) + ": " + e.what());
    }
  }
  if (width < 0) width = 0;
  sets.ind.resize(static_cast<Eigen::Index>(ind.size()), width);
  for (size_t i = 0; i < ind.size(); ++i) sets.ind.row(i) = ind[i];
  sets.ood.resize(static_cast<Eigen::Index>(ood.size()), width);
  for (size_t i = 0; i < ood.size(); ++i) sets.ood.row(i) = ood[i];
  return sets;
}

void write_loss_log(const std::vector<double>& losses,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "step,loss\n";
  for (size_t i = 0; i < losses.size(); ++i) out << i << "," << losses[i] << "\n";
}

}  // namespace gdda
