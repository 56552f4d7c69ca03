#include "gdda/disentangler.hpp"

#include <cmath>
#include <fstream>

namespace gdda {

namespace {
constexpr double kProbFloor = 1e-12;

MlpSpec enc_c_spec(const DisentanglerConfig& c) { return {c.d, c.hidden, c.d1}; }
MlpSpec enc_s_spec(const DisentanglerConfig& c) { return {c.d, c.hidden, c.d2}; }
MlpSpec dec_spec(const DisentanglerConfig& c) {
  return {c.d1 + c.d2, c.hidden, c.d};
}
MlpSpec phi_spec(const DisentanglerConfig& c) {
  return {c.d, 0, c.num_classes};  // linear head
}
}  // namespace

void DisentanglerConfig::validate() const {
  if (d < 1 || d1 < 1 || d2 < 1)
    throw ConfigError("disentangler: factor widths must be >= 1");
  if (d1 + d2 != d)
    throw ConfigError("disentangler: d1 + d2 = " + std::to_string(d1 + d2) +
                      " does not match representation width " +
                      std::to_string(d));
  if (hidden < 0) throw ConfigError("disentangler: negative hidden width");
  if (num_classes < 2) throw ConfigError("disentangler: need >= 2 classes");
  if (beta1 < 0.0 || beta2 < 0.0)
    throw ConfigError("disentangler: loss weights must be nonnegative");
}

ParameterSet disentangler_init(const DisentanglerConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet ps;
  mlp_init(ps, "enc_c", enc_c_spec(cfg), rng);
  mlp_init(ps, "enc_s", enc_s_spec(cfg), rng);
  mlp_init(ps, "dec", dec_spec(cfg), rng);
  mlp_init(ps, "phi", phi_spec(cfg), rng);
  return ps;
}

FactorPair encode(const DisentanglerConfig& cfg, const ParameterSet& params,
                  const Eigen::MatrixXd& h) {
  if (h.cols() != cfg.d)
    throw UsageError("encode: representation width " +
                     std::to_string(h.cols()) + ", expected " +
                     std::to_string(cfg.d));
  FactorPair fp;
  fp.semantic = mlp_forward(params, "enc_c", enc_c_spec(cfg), h);
  fp.style = mlp_forward(params, "enc_s", enc_s_spec(cfg), h);
  return fp;
}

Eigen::MatrixXd decode(const DisentanglerConfig& cfg, const ParameterSet& params,
                       const Eigen::MatrixXd& semantic,
                       const Eigen::MatrixXd& style) {
  if (semantic.cols() != cfg.d1 || style.cols() != cfg.d2 ||
      semantic.rows() != style.rows())
    throw UsageError("decode: factor shapes do not match d1/d2");
  Eigen::MatrixXd cat(semantic.rows(), cfg.d1 + cfg.d2);
  cat << semantic, style;
  return mlp_forward(params, "dec", dec_spec(cfg), cat);
}

Eigen::MatrixXd style_resample(int rows, int d2, Rng& rng) {
  if (d2 < 1) throw UsageError("style_resample: d2 must be >= 1");
  return randn_matrix(rng, rows, d2);
}

Phase1Vars phase1_losses_t(ad::Tape& tape, const ParamVars& pv,
                           const DisentanglerConfig& cfg, ad::Var h,
                           const std::vector<int>& labels,
                           const Eigen::MatrixXd& style_prime) {
  Eigen::Index n = tape.value(h).rows();
  if (style_prime.rows() != n || style_prime.cols() != cfg.d2)
    throw UsageError("phase1: style draw shape does not match the batch");
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw UsageError("phase1: label count does not match the batch");

  auto enc_c = [&](ad::Var x) {
    return mlp_forward_t(tape, pv, "enc_c", enc_c_spec(cfg), x);
  };
  auto enc_s = [&](ad::Var x) {
    return mlp_forward_t(tape, pv, "enc_s", enc_s_spec(cfg), x);
  };
  auto dec = [&](ad::Var c, ad::Var s) {
    return mlp_forward_t(tape, pv, "dec", dec_spec(cfg), tape.hcat(c, s));
  };
  auto phi = [&](ad::Var x) {
    return mlp_forward_t(tape, pv, "phi", phi_spec(cfg), x);
  };

  ad::Var c = enc_c(h);
  ad::Var s = enc_s(h);
  ad::Var h_re = dec(c, s);
  ad::Var c_re = enc_c(h_re);
  ad::Var s_re = enc_s(h_re);
  ad::Var h_prime = dec(c, tape.constant(style_prime));

  ad::Var recon = tape.add(tape.mean_abs(tape.sub(h, h_re)),
                           tape.add(tape.mean_abs(tape.sub(c, c_re)),
                                    tape.mean_abs(tape.sub(s, s_re))));

  // KL(softmax(phi(h')) || softmax(phi(h_re))), probabilities floored so the
  // logs stay finite, averaged over the batch.
  ad::Var logp = tape.log_softmax_rows(phi(h_prime));
  ad::Var logq = tape.log_softmax_rows(phi(h_re));
  ad::Var p = tape.clamp_min(tape.exp(logp), kProbFloor);
  ad::Var q = tape.clamp_min(tape.exp(logq), kProbFloor);
  ad::Var kl_terms = tape.hadamard(p, tape.sub(tape.log(p), tape.log(q)));
  ad::Var sim = tape.scale(tape.sum(kl_terms), 1.0 / static_cast<double>(n));

  ad::Var cls = tape.ce_mean(phi(h_prime), labels);

  ad::Var total = tape.add(
      recon, tape.add(tape.scale(sim, cfg.beta1), tape.scale(cls, cfg.beta2)));
  return Phase1Vars{recon, sim, cls, total};
}

namespace {

Phase1Losses read_losses(const ad::Tape& tape, const Phase1Vars& v) {
  Phase1Losses out;
  out.recon = tape.scalar(v.recon);
  out.sim = tape.scalar(v.sim);
  out.cls = tape.scalar(v.cls);
  out.total = tape.scalar(v.total);
  auto check = [](double x, const char* term) {
    if (!std::isfinite(x))
      throw NumericError(std::string("phase1: non-finite ") + term);
  };
  check(out.recon, "L_recon");
  check(out.sim, "L_sim");
  check(out.cls, "L_cls");
  check(out.total, "L_total");
  return out;
}

}  // namespace

Phase1Losses phase1_losses_with_style(const DisentanglerConfig& cfg,
                                      const ParameterSet& params,
                                      const Eigen::MatrixXd& h, int label,
                                      const Eigen::MatrixXd& style_prime) {
  if (label < 0 || label >= cfg.num_classes)
    throw UsageError("phase1: label out of range");
  ad::Tape tape;
  ParamVars pv = register_params(tape, params);
  Phase1Vars v =
      phase1_losses_t(tape, pv, cfg, tape.constant(h), {label}, style_prime);
  return read_losses(tape, v);
}

Phase1Losses phase1_losses(const DisentanglerConfig& cfg,
                           const ParameterSet& params, const Eigen::MatrixXd& h,
                           int label, Rng& rng) {
  return phase1_losses_with_style(cfg, params, h, label,
                                  style_resample(1, cfg.d2, rng));
}

namespace {

// One optimization epoch shared by both trainers: the caller supplies the
// representation node builder so the backbone can be inside or outside the
// tape.
template <typename RepBuilder>
EpochLog run_phase1_loop(const DisentanglerConfig& cfg, ParameterSet& params,
                         Eigen::Index n, const std::vector<int>& labels,
                         const Phase1TrainOptions& opts, Rng& rng,
                         RepBuilder&& build_reps) {
  if (n == 0) throw UsageError("phase1: empty training set");
  cfg.validate();
  EpochLog log;
  AdamOptimizer opt(opts.lr);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Eigen::MatrixXd style_prime =
        style_resample(static_cast<int>(n), cfg.d2, rng);
    ad::Tape tape;
    ParamVars pv = register_params(tape, params);
    ad::Var h = build_reps(tape, pv);
    Phase1Vars v = phase1_losses_t(tape, pv, cfg, h, labels, style_prime);
    Phase1Losses row;
    try {
      row = read_losses(tape, v);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at epoch " +
                         std::to_string(epoch));
    }
    log.rows.push_back(row);
    tape.backward(v.total);
    opt.step(params, extract_grads(tape, pv, params));
  }
  params.check_finite("phase1 parameters");
  return log;
}

}  // namespace

EpochLog train_phase1(const DisentanglerConfig& cfg, ParameterSet& params,
                      const Eigen::MatrixXd& reps,
                      const std::vector<int>& labels,
                      const Phase1TrainOptions& opts, Rng& rng) {
  return run_phase1_loop(cfg, params, reps.rows(), labels, opts, rng,
                         [&](ad::Tape& tape, const ParamVars&) {
                           return tape.constant(reps);
                         });
}

EpochLog train_phase1_joint(const GinConfig& gin_cfg,
                            const DisentanglerConfig& cfg,
                            ParameterSet& params,
                            const std::vector<GraphInstance>& graphs,
                            const std::vector<int>& labels,
                            const Phase1TrainOptions& opts, Rng& rng) {
  return run_phase1_loop(
      cfg, params, static_cast<Eigen::Index>(graphs.size()), labels, opts, rng,
      [&](ad::Tape& tape, const ParamVars& pv) {
        std::vector<ad::Var> rows;
        rows.reserve(graphs.size());
        for (const GraphInstance& g : graphs)
          rows.push_back(gin_forward_t(gin_cfg, tape, pv, g));
        return tape.vcat(rows);
      });
}

void write_phase1_log(const EpochLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path.string());
  out << "epoch,L_recon,L_sim,L_cls,L_total\n";
  for (size_t i = 0; i < log.rows.size(); ++i) {
    const Phase1Losses& r = log.rows[i];
    out << i << "," << r.recon << "," << r.sim << "," << r.cls << ","
        << r.total << "\n";
  }
}

}  // namespace gdda
