#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gdda/ad.hpp"
#include "gdda/params.hpp"
#include "testutil.hpp"

using namespace gdda;
using testutil::check_gradients;

namespace {

// One leaf matrix "x", away from relu/abs kinks so finite differences are
// clean.
ParameterSet one_leaf(uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
  Rng rng = make_rng(seed);
  ParameterSet ps;
  Mat x = randn_matrix(rng, rows, cols);
  x = x.unaryExpr([](double v) {
    double shifted = std::abs(v) < 0.2 ? v + (v >= 0 ? 0.3 : -0.3) : v;
    return shifted;
  });
  ps.add("x", std::move(x));
  return ps;
}

ParameterSet two_leaves(uint64_t seed, Eigen::Index rows, Eigen::Index cols,
                        Eigen::Index rows2, Eigen::Index cols2) {
  Rng rng = make_rng(seed);
  ParameterSet ps;
  ps.add("a", randn_matrix(rng, rows, cols));
  ps.add("b", randn_matrix(rng, rows2, cols2));
  return ps;
}

}  // namespace

TEST_CASE("values: elementwise and reductions") {
  ad::Tape tape;
  Mat m(2, 2);
  m << 1.0, -2.0, 3.0, -4.0;
  ad::Var x = tape.leaf(m);

  CHECK(tape.value(tape.relu(x))(0, 1) == 0.0);
  CHECK(tape.value(tape.relu(x))(1, 0) == 3.0);
  CHECK(tape.scalar(tape.sum(x)) == doctest::Approx(-2.0));
  CHECK(tape.scalar(tape.mean(x)) == doctest::Approx(-0.5));
  CHECK(tape.scalar(tape.mean_abs(x)) == doctest::Approx(2.5));
  CHECK(tape.scalar(tape.sum_sq(x)) == doctest::Approx(1 + 4 + 9 + 16));
  CHECK(tape.value(tape.colsum(x))(0, 0) == doctest::Approx(4.0));
  CHECK(tape.value(tape.colmean(x))(0, 1) == doctest::Approx(-3.0));
  CHECK(tape.value(tape.clamp_min(x, 0.5))(0, 1) == doctest::Approx(0.5));
}

TEST_CASE("values: logsumexp and log-softmax") {
  ad::Tape tape;
  Mat m(1, 2);
  m << 0.0, 0.0;
  ad::Var x = tape.leaf(m);
  CHECK(tape.value(tape.logsumexp_rows(x))(0, 0) ==
        doctest::Approx(std::log(2.0)));
  CHECK(tape.value(tape.log_softmax_rows(x))(0, 0) ==
        doctest::Approx(std::log(0.5)));

  // stability at large magnitudes
  Mat big(1, 2);
  big << 1000.0, 1000.0;
  ad::Var y = tape.leaf(big);
  CHECK(tape.value(tape.logsumexp_rows(y))(0, 0) ==
        doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("values: ce_mean closed form") {
  // softmax([ln 3, ln 1]) = [3/4, 1/4]; CE of label 0 = ln(4/3)
  ad::Tape tape;
  Mat logits(1, 2);
  logits << std::log(3.0), 0.0;
  ad::Var z = tape.leaf(logits);
  CHECK(tape.scalar(tape.ce_mean(z, {0})) ==
        doctest::Approx(std::log(4.0 / 3.0)));
}

TEST_CASE("values: max_of routes to first argmax") {
  ad::Tape tape;
  Mat a(1, 1), b(1, 1), c(1, 1);
  a << 2.0;
  b << 5.0;
  c << 5.0;
  int argmax = -1;
  ad::Var m = tape.max_of(
      {tape.leaf(a), tape.leaf(b), tape.leaf(c)}, &argmax);
  CHECK(tape.scalar(m) == doctest::Approx(5.0));
  CHECK(argmax == 1);
}

TEST_CASE("gradients: unary elementwise ops") {
  for (uint64_t seed : {11u, 12u, 13u}) {
    ParameterSet ps = one_leaf(seed, 3, 4);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.relu(pv.at("x")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.exp(t.scale(pv.at("x"), 0.5)));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          // keep the log argument positive
          return t.sum(t.log(t.add_scalar(t.relu(pv.at("x")), 1.0)));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.clamp_min(pv.at("x"), 0.4));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean_abs(t.neg(pv.at("x")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) { return t.sum_sq(pv.at("x")); },
        ps);
  }
}

TEST_CASE("gradients: binary ops and matmul") {
  for (uint64_t seed : {21u, 22u, 23u}) {
    ParameterSet ps = two_leaves(seed, 3, 4, 3, 4);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.sum_sq(t.add(pv.at("a"), pv.at("b")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.sum_sq(t.sub(pv.at("a"), pv.at("b")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.hadamard(pv.at("a"), pv.at("b")));
        },
        ps);

    ParameterSet mm = two_leaves(seed, 3, 4, 4, 2);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.sum_sq(t.matmul(pv.at("a"), pv.at("b")));
        },
        mm);

    ParameterSet br = two_leaves(seed, 3, 4, 1, 4);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.sum_sq(t.add_rowvec(pv.at("a"), pv.at("b")));
        },
        br);
  }
}

TEST_CASE("gradients: shape ops") {
  for (uint64_t seed : {31u, 32u, 33u}) {
    ParameterSet ps = two_leaves(seed, 2, 3, 2, 5);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          ad::Var cat = t.hcat(pv.at("a"), pv.at("b"));
          return t.sum_sq(t.slice_cols(cat, 2, 4));
        },
        ps);

    ParameterSet rows = two_leaves(seed, 1, 4, 3, 4);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          ad::Var v = t.vcat({pv.at("a"), pv.at("b")});
          return t.mean(t.hadamard(v, v));
        },
        rows);

    ParameterSet one = one_leaf(seed, 4, 3);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          ad::Var cs = t.colsum(pv.at("x"));
          ad::Var cm = t.colmean(pv.at("x"));
          return t.sum_sq(t.add(cs, cm));
        },
        one);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.pick(t.hadamard(pv.at("x"), pv.at("x")), 2, 1);
        },
        one);
  }
}

TEST_CASE("gradients: softmax family") {
  for (uint64_t seed : {41u, 42u, 43u}) {
    ParameterSet ps = one_leaf(seed, 4, 3);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.log_softmax_rows(pv.at("x")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.mean(t.logsumexp_rows(pv.at("x")));
        },
        ps);
    check_gradients(
        [](ad::Tape& t, const ParamVars& pv) {
          return t.ce_mean(pv.at("x"), {0, 2, 1, 2});
        },
        ps);
  }
}

TEST_CASE("gradients: max_of picks one branch") {
  ParameterSet ps = two_leaves(51, 1, 1, 1, 1);
  ps.at("a")(0, 0) = 1.0;
  ps.at("b")(0, 0) = 3.0;
  check_gradients(
      [](ad::Tape& t, const ParamVars& pv) {
        return t.max_of({t.sum(pv.at("a")), t.sum(pv.at("b"))});
      },
      ps);
  // closed form: gradient 0 for the losing branch, 1 for the winner
  LossGrads lg = loss_and_gradients(
      [](ad::Tape& t, const ParamVars& pv) {
        return t.max_of({t.sum(pv.at("a")), t.sum(pv.at("b"))});
      },
      ps);
  CHECK(lg.grads.at("a")(0, 0) == 0.0);
  CHECK(lg.grads.at("b")(0, 0) == 1.0);
}

TEST_CASE("gradient of cross-entropy linear head equals closed form") {
  // single sample x, 2-class linear head: dL/dW = x^T (softmax - onehot)
  Rng rng = make_rng(61);
  Mat x = randn_matrix(rng, 1, 3);
  ParameterSet ps;
  ps.add("w", randn_matrix(rng, 3, 2));
  ps.add("b", randn_matrix(rng, 1, 2));
  Objective obj = [&](ad::Tape& t, const ParamVars& pv) {
    ad::Var logits =
        t.add_rowvec(t.matmul(t.constant(x), pv.at("w")), pv.at("b"));
    return t.ce_mean(logits, {1});
  };
  LossGrads lg = loss_and_gradients(obj, ps);

  Eigen::RowVectorXd logits = (x * ps.at("w") + ps.at("b")).row(0);
  Eigen::RowVectorXd p = (logits.array() - logits.maxCoeff()).exp();
  p /= p.sum();
  Eigen::RowVectorXd delta = p;
  delta(1) -= 1.0;
  Mat expected = x.transpose() * delta;
  CHECK((lg.grads.at("w") - expected).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((lg.grads.at("b") - delta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("quadratic objective gradient equals the parameters") {
  ParameterSet ps = one_leaf(71, 3, 3);
  LossGrads lg = loss_and_gradients(
      [](ad::Tape& t, const ParamVars& pv) {
        return t.scale(t.sum_sq(pv.at("x")), 0.5);
      },
      ps);
  CHECK((lg.grads.at("x") - ps.at("x")).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constant objective has zero gradients") {
  ParameterSet ps = one_leaf(81, 2, 2);
  LossGrads lg = loss_and_gradients(
      [](ad::Tape& t, const ParamVars&) {
        return t.constant(Mat::Constant(1, 1, 7.0));
      },
      ps);
  CHECK(lg.loss == 7.0);
  CHECK(lg.grads.at("x").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mlp forward matches tape forward and passes the gradient check") {
  Rng rng = make_rng(91);
  MlpSpec spec{4, 6, 3};
  ParameterSet ps;
  mlp_init(ps, "net", spec, rng);
  Mat x = randn_matrix(rng, 5, 4);

  Mat plain = mlp_forward(ps, "net", spec, x);
  ad::Tape tape;
  ParamVars pv = register_params(tape, ps);
  ad::Var out = mlp_forward_t(tape, pv, "net", spec, tape.constant(x));
  CHECK((plain - tape.value(out)).cwiseAbs().maxCoeff() < 1e-12);

  check_gradients(
      [&](ad::Tape& t, const ParamVars& p) {
        return t.sum_sq(mlp_forward_t(t, p, "net", spec, t.constant(x)));
      },
      ps);
}

TEST_CASE("adam converges on a quadratic") {
  ParameterSet ps;
  ps.add("x", Mat::Constant(1, 2, 5.0));
  AdamOptimizer opt(0.05);
  Objective obj = [](ad::Tape& t, const ParamVars& pv) {
    return t.sum_sq(pv.at("x"));
  };
  for (int i = 0; i < 500; ++i) {
    LossGrads lg = loss_and_gradients(obj, ps);
    opt.step(ps, lg.grads);
  }
  CHECK(ps.at("x").cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("parameter set sections, merge, and checkpoint order") {
  Rng rng = make_rng(101);
  ParameterSet ps;
  ps.add("gin.w", randn_matrix(rng, 2, 2));
  ps.add("head.w", randn_matrix(rng, 2, 2));
  ps.add("gin.b", randn_matrix(rng, 1, 2));

  ParameterSet gin = ps.section("gin.");
  CHECK(gin.size() == 2);
  CHECK(gin.entries()[0].name == "gin.w");
  CHECK(gin.entries()[1].name == "gin.b");

  ParameterSet merged = gin;
  merged.merge(ps.section("head."));
  CHECK(merged.size() == 3);
  CHECK(merged.entries()[2].name == "head.w");
  CHECK_THROWS_AS(merged.merge(gin), UsageError);
}
