#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "gdda/diffusion.hpp"
#include "testutil.hpp"

using namespace gdda;
using testutil::check_gradients;
using testutil::TempDir;

namespace {

ScoreNet zero_net(int d1, int d2, int hidden = 8) {
  ScoreNetConfig cfg;
  cfg.d1 = d1;
  cfg.d2 = d2;
  cfg.hidden = hidden;
  Rng rng = make_rng(1);
  ScoreNet net = score_net_init(cfg, rng);
  for (auto& e : net.params.entries()) e.value.setZero();
  return net;
}

ScoreNet tiny_trained_net(int d1 = 2, int d2 = 2, uint64_t seed = 2) {
  ScoreNetConfig cfg;
  cfg.d1 = d1;
  cfg.d2 = d2;
  cfg.hidden = 8;
  Rng rng = make_rng(seed);
  ScoreNet net = score_net_init(cfg, rng);
  net.trained = true;  // structurally valid, deliberately untrained weights
  return net;
}

}  // namespace

TEST_CASE("schedule closed forms") {
  DiffusionSchedule sched;  // beta 0.1 -> 20, T = 1

  // integral of beta over [0, T] is (0.1 + 20)/2 = 10.05
  CHECK(sched.alpha(1.0) == doctest::Approx(std::exp(-5.025)).epsilon(1e-12));
  CHECK(sched.alpha(1.0) == doctest::Approx(6.56e-3).epsilon(0.01));
  CHECK(sched.beta(0.0) == doctest::Approx(0.1));
  CHECK(sched.beta(1.0) == doctest::Approx(20.0));
  CHECK(sched.alpha(0.0) == doctest::Approx(1.0));
  CHECK(sched.sigma(0.0) == doctest::Approx(0.0));

  // variance preservation: alpha^2 + sigma^2 = 1 along the whole path
  for (double t : {0.1, 0.33, 0.5, 0.77, 1.0}) {
    double a = sched.alpha(t), s = sched.sigma(t);
    CHECK(a * a + s * s == doctest::Approx(1.0).epsilon(1e-12));
  }

  // constant-beta special case
  DiffusionSchedule flat;
  flat.beta_min = flat.beta_max = 2.0;
  for (double t : {0.0, 0.25, 1.0})
    CHECK(flat.alpha(t) == doctest::Approx(std::exp(-t)).epsilon(1e-12));

  DiffusionSchedule bad;
  bad.beta_min = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("time embedding is the documented sinusoid stack") {
  double t = 0.37;
  Eigen::RowVectorXd emb = time_embedding(t);
  REQUIRE(emb.size() == kTimeEmbedDim);
  for (int k = 0; k < 8; ++k) {
    CHECK(emb(k) == doctest::Approx(std::sin(std::ldexp(t, k))));
    CHECK(emb(8 + k) == doctest::Approx(std::cos(std::ldexp(t, k))));
  }
}

TEST_CASE("forward perturbation obeys the VP marginal") {
  DiffusionSchedule sched;
  Rng rng = make_rng(3);
  Eigen::MatrixXd x0 = randn_matrix(rng, 4, 3);

  // t = 0: no diffusion
  Perturbed p0 = forward_perturb(sched, x0, 0.0, rng);
  CHECK((p0.x_t - x0).cwiseAbs().maxCoeff() == 0.0);

  // closed form at a generic t given the returned noise
  Perturbed pt = forward_perturb(sched, x0, 0.6, rng);
  Eigen::MatrixXd expect =
      sched.alpha(0.6) * x0 + sched.sigma(0.6) * pt.noise;
  CHECK((pt.x_t - expect).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(forward_perturb(sched, x0, -0.1, rng), UsageError);
  CHECK_THROWS_AS(forward_perturb(sched, x0, 1.1, rng), UsageError);

  // at t = T the marginal is (nearly) standard normal
  Eigen::MatrixXd big = Eigen::MatrixXd::Constant(5000, 1, 0.8);
  Perturbed pT = forward_perturb(sched, big, 1.0, rng);
  double mean = pT.x_t.col(0).mean();
  double var =
      (pT.x_t.col(0).array() - mean).square().sum() / (5000 - 1);
  CHECK(std::abs(mean) < 0.05);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("zero score net makes the DSM loss the noise energy d1 + d2") {
  DiffusionSchedule sched;
  ScoreNet net = zero_net(2, 3);
  Rng rng = make_rng(4);
  Eigen::MatrixXd c0 = randn_matrix(rng, 10000, 2);
  Eigen::MatrixXd s0 = randn_matrix(rng, 10000, 3);
  double loss = dsm_loss(net, sched, c0, s0, rng);
  CHECK(loss == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("analytic score cancels the noise exactly on a point mass") {
  // x0 = 0 gives x_t = sigma eps and marginal score -x_t / sigma^2, so
  // sigma * score + eps = 0 identically.
  DiffusionSchedule sched;
  Rng rng = make_rng(5);
  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(64, 2);
  DsmBatch batch = make_dsm_batch(sched, zeros, zeros, rng);
  for (int i = 0; i < 64; ++i) {
    double sig = batch.sigmas(i);
    Eigen::RowVectorXd score_c = -batch.c_t.row(i) / (sig * sig);
    Eigen::RowVectorXd resid = sig * score_c + batch.eps_c.row(i);
    CHECK(resid.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("dsm loss is deterministic given the rng state") {
  DiffusionSchedule sched;
  ScoreNet net = tiny_trained_net();
  Rng rng = make_rng(6);
  Eigen::MatrixXd c0 = randn_matrix(rng, 1, 2);
  Eigen::MatrixXd s0 = randn_matrix(rng, 1, 2);
  Rng r1 = make_rng(7), r2 = make_rng(7);
  CHECK(dsm_loss(net, sched, c0, s0, r1) ==
        dsm_loss(net, sched, c0, s0, r2));
}

TEST_CASE("score net forward: tape and plain agree") {
  ScoreNetConfig cfg;
  cfg.d1 = 2;
  cfg.d2 = 3;
  cfg.hidden = 8;
  Rng rng = make_rng(8);
  ScoreNet net = score_net_init(cfg, rng);
  Eigen::MatrixXd c = randn_matrix(rng, 5, 2);
  Eigen::MatrixXd s = randn_matrix(rng, 5, 3);
  Eigen::VectorXd ts(5);
  ts << 0.1, 0.3, 0.5, 0.7, 0.9;

  auto [pc, psc] = score_forward(net, c, s, ts);
  ad::Tape tape;
  ParamVars pv = register_params(tape, net.params);
  auto [tc, tsc] = score_forward_t(tape, pv, cfg, tape.constant(c),
                                   tape.constant(s), ts);
  CHECK((pc - tape.value(tc)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((psc - tape.value(tsc)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(pc.cols() == 2);
  CHECK(psc.cols() == 3);
}

TEST_CASE("DSM objective passes the gradient contract") {
  DiffusionSchedule sched;
  ScoreNetConfig cfg;
  cfg.d1 = 2;
  cfg.d2 = 2;
  cfg.hidden = 4;
  for (uint64_t seed : {31u, 32u, 33u}) {
    Rng rng = make_rng(seed);
    ScoreNet net = score_net_init(cfg, rng);
    Eigen::MatrixXd c0 = randn_matrix(rng, 3, 2);
    Eigen::MatrixXd s0 = randn_matrix(rng, 3, 2);
    DsmBatch batch = make_dsm_batch(sched, c0, s0, rng);
    check_gradients(
        [&](ad::Tape& t, const ParamVars& pv) {
          return dsm_loss_t(t, pv, cfg, batch);
        },
        net.params);
  }
}

TEST_CASE("score training is deterministic and descends") {
  DiffusionSchedule sched;
  ScoreNetConfig cfg;
  cfg.d1 = 1;
  cfg.d2 = 1;
  cfg.hidden = 16;
  Eigen::MatrixXd c0, s0;
  {
    Rng rng = make_rng(9);
    c0 = randn_matrix(rng, 64, 1);
    s0 = randn_matrix(rng, 64, 1);
  }

  auto run = [&](int epochs) {
    Rng rng = make_rng(10);
    ScoreNet net = score_net_init(cfg, rng);
    ScoreTrainOptions opts;
    opts.epochs = epochs;
    std::vector<double> log = train_score(net, sched, c0, s0, opts, rng);
    return std::make_pair(std::move(net), std::move(log));
  };

  auto [net0, log0] = run(0);
  Rng fresh = make_rng(10);
  CHECK(net0.params == score_net_init(cfg, fresh).params);
  CHECK(net0.trained);
  CHECK(log0.empty());

  auto [net1, log1] = run(300);
  auto [net2, log2] = run(300);
  CHECK(net1.params == net2.params);
  REQUIRE(log1.size() == 300);
  // averaged tail under the averaged head: training reduced the objective
  double head = 0, tail = 0;
  for (int i = 0; i < 30; ++i) {
    head += log1[i];
    tail += log1[log1.size() - 1 - i];
  }
  CHECK(tail < head);
}

TEST_CASE("reverse sampling requires a trained net and honors n = 0") {
  DiffusionSchedule sched;
  sched.num_steps = 10;
  Rng rng = make_rng(11);
  ScoreNetConfig cfg;
  cfg.d1 = 2;
  cfg.d2 = 2;
  cfg.hidden = 4;
  ScoreNet net = score_net_init(cfg, rng);

  PerturbationConfig pcfg;
  pcfg.lambda_c = 0.0;
  pcfg.lambda_s = 0.4;
  pcfg.num_samples = 3;
  pcfg.seed = 5;
  CHECK_THROWS_AS(reverse_sample(net, sched, pcfg), UsageError);

  net.trained = true;
  pcfg.num_samples = 0;
  FactorPair empty = reverse_sample(net, sched, pcfg);
  CHECK(empty.semantic.rows() == 0);
  CHECK(empty.style.rows() == 0);

  PerturbationConfig bad = pcfg;
  bad.lambda_c = 1.5;
  CHECK_THROWS_AS(reverse_sample(net, sched, bad), ConfigError);
}

TEST_CASE("reverse sampling is seed-reproducible") {
  DiffusionSchedule sched;
  sched.num_steps = 20;
  ScoreNet net = tiny_trained_net();
  PerturbationConfig pcfg;
  pcfg.lambda_c = 0.2;
  pcfg.lambda_s = 0.6;
  pcfg.num_samples = 4;
  pcfg.seed = 77;

  FactorPair a = reverse_sample(net, sched, pcfg);
  FactorPair b = reverse_sample(net, sched, pcfg);
  CHECK((a.semantic - b.semantic).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.style - b.style).cwiseAbs().maxCoeff() == 0.0);

  pcfg.seed = 78;
  FactorPair c = reverse_sample(net, sched, pcfg);
  CHECK((a.semantic - c.semantic).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lambda = 1 removes the data attraction exactly") {
  // oracle: integrate the same discretization with the score term dropped,
  // replaying the documented per-trajectory draw order
  DiffusionSchedule sched;
  sched.num_steps = 25;
  ScoreNet net = tiny_trained_net(2, 3, 13);
  PerturbationConfig pcfg;
  pcfg.lambda_c = 1.0;
  pcfg.lambda_s = 1.0;
  pcfg.num_samples = 5;
  pcfg.seed = 99;

  FactorPair got = reverse_sample(net, sched, pcfg);

  int n = pcfg.num_samples, d1 = 2, d2 = 3;
  Eigen::MatrixXd c(n, d1), s(n, d2);
  std::vector<Rng> rngs;
  for (int i = 0; i < n; ++i) {
    rngs.push_back(make_rng(mix_seed(pcfg.seed, static_cast<uint64_t>(i))));
    c.row(i) = randn_matrix(rngs[i], 1, d1);
    s.row(i) = randn_matrix(rngs[i], 1, d2);
  }
  double dt = sched.T / sched.num_steps;
  for (int k = 0; k < sched.num_steps; ++k) {
    double t = sched.T - k * dt;
    double bt = sched.beta(t);
    Eigen::MatrixXd z_c(n, d1), z_s(n, d2);
    for (int i = 0; i < n; ++i) {
      z_c.row(i) = randn_matrix(rngs[i], 1, d1);
      z_s.row(i) = randn_matrix(rngs[i], 1, d2);
    }
    double gdt = std::sqrt(bt * dt);
    c += dt * (0.5 * bt * c) + gdt * z_c;
    s += dt * (0.5 * bt * s) + gdt * z_s;
  }
  CHECK((got.semantic - c).cwiseAbs().maxCoeff() == 0.0);
  CHECK((got.style - s).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("generate_pseudo wires factors through the decoder") {
  DiffusionSchedule sched;
  sched.num_steps = 15;
  ScoreNet net = tiny_trained_net(2, 2, 14);

  DisentanglerConfig dis;
  dis.d = 4;
  dis.d1 = 2;
  dis.d2 = 2;
  dis.hidden = 0;
  dis.num_classes = 2;
  Rng rng = make_rng(15);
  ParameterSet dp = disentangler_init(dis, rng);
  testutil::set_affine_identity(dp, "dec", 4);

  auto [ind, ood] = generate_pseudo(net, sched, dis, dp, 0.4, 0.4, 6, 123);
  REQUIRE(ind.rows() == 6);
  REQUIRE(ood.rows() == 6);
  CHECK(ind.cols() == 4);

  // identity decoder: pseudo rows are exactly the concatenated factor draws
  PerturbationConfig ind_cfg;
  ind_cfg.lambda_c = 0.0;
  ind_cfg.lambda_s = 0.4;
  ind_cfg.num_samples = 6;
  ind_cfg.seed = mix_seed(123, 0);
  FactorPair fp = reverse_sample(net, sched, ind_cfg);
  CHECK((ind.leftCols(2) - fp.semantic).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ind.rightCols(2) - fp.style).cwiseAbs().maxCoeff() == 0.0);

  // the two runs use different streams, so the style draws differ
  CHECK((ind.rightCols(2) - ood.rightCols(2)).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS(generate_pseudo(net, sched, dis, dp, 0.0, 0.4, 3, 1),
                  ConfigError);
  CHECK_THROWS_AS(generate_pseudo(net, sched, dis, dp, 0.4, 0.0, 3, 1),
                  ConfigError);

  auto [e1, e2] = generate_pseudo(net, sched, dis, dp, 0.4, 0.4, 0, 1);
  CHECK(e1.rows() == 0);
  CHECK(e2.rows() == 0);
  CHECK(e1.cols() == 4);
}

TEST_CASE("pseudo sets round-trip through JSONL") {
  TempDir tmp;
  Rng rng = make_rng(16);
  PseudoSets sets;
  sets.ind = randn_matrix(rng, 4, 3);
  sets.ood = randn_matrix(rng, 4, 3);
  sets.lambda_c = 0.4;
  sets.lambda_s = 0.7;
  auto path = tmp.path / "pseudo.jsonl";
  save_pseudo(sets, path);
  PseudoSets loaded = load_pseudo(path);
  CHECK((loaded.ind - sets.ind).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.ood - sets.ood).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.lambda_c == 0.4);
  CHECK(loaded.lambda_s == 0.7);

  CHECK_THROWS_AS(load_pseudo(tmp.path / "absent.jsonl"),
                  MissingArtifactError);

  auto bad = tmp.path / "bad.jsonl";
  {
    std::ofstream out(bad);
    out << R"({"kind":"mystery","lambda_c":0,"lambda_s":0,"values":[1]})"
        << "\n";
  }
  try {
    load_pseudo(bad);
    FAIL("expected an error for the unknown kind");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
}

TEST_CASE("score training log serializes as CSV") {
  TempDir tmp;
  auto path = tmp.path / "loss.csv";
  write_loss_log({1.5, 0.75}, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,loss");
}
