#include "gdda/params.hpp"

#include <cmath>

namespace gdda {

Mat& ParameterSet::add(const std::string& name, Mat init) {
  if (index_.count(name) > 0)
    throw UsageError("parameter already registered: " + name);
  index_[name] = static_cast<int>(entries_.size());
  entries_.push_back(Entry{name, std::move(init)});
  return entries_.back().value;
}

Mat& ParameterSet::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return entries_[it->second].value;
}

const Mat& ParameterSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return entries_[it->second].value;
}

bool ParameterSet::has(const std::string& name) const {
  return index_.count(name) > 0;
}

Eigen::Index ParameterSet::total_coeffs() const {
  Eigen::Index n = 0;
  for (const Entry& e : entries_) n += e.value.size();
  return n;
}

void ParameterSet::check_finite(const std::string& context) const {
  for (const Entry& e : entries_)
    if (!e.value.allFinite())
      throw NumericError("non-finite parameter " + e.name + " in " + context);
}

ParameterSet ParameterSet::section(const std::string& prefix) const {
  ParameterSet out;
  for (const Entry& e : entries_)
    if (e.name.rfind(prefix, 0) == 0) out.add(e.name, e.value);
  return out;
}

void ParameterSet::merge(const ParameterSet& other) {
  for (const Entry& e : other.entries_) add(e.name, e.value);
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (entries_[i].value.rows() != other.entries_[i].value.rows()) return false;
    if (entries_[i].value.cols() != other.entries_[i].value.cols()) return false;
    if (entries_[i].value != other.entries_[i].value) return false;
  }
  return true;
}

ParameterSet zeros_like(const ParameterSet& ps) {
  ParameterSet out;
  for (const auto& e : ps.entries())
    out.add(e.name, Mat::Zero(e.value.rows(), e.value.cols()));
  return out;
}

ad::Var ParamVars::at(const std::string& name) const {
  if (source == nullptr) throw UsageError("ParamVars not initialized");
  for (size_t i = 0; i < source->entries().size(); ++i)
    if (source->entries()[i].name == name) return vars[i];
  throw UsageError("unknown parameter: " + name);
}

ParamVars register_params(ad::Tape& tape, const ParameterSet& ps) {
  ParamVars pv;
  pv.source = &ps;
  pv.vars.reserve(ps.size());
  for (const auto& e : ps.entries()) pv.vars.push_back(tape.leaf(e.value));
  return pv;
}

LossGrads loss_and_gradients(const Objective& objective,
                             const ParameterSet& params) {
  ad::Tape tape;
  ParamVars pv = register_params(tape, params);
  ad::Var root = objective(tape, pv);
  double loss = tape.scalar(root);
  if (!std::isfinite(loss)) throw NumericError("objective is non-finite");
  tape.backward(root);
  LossGrads out;
  out.loss = loss;
  out.grads = extract_grads(tape, pv, params);
  return out;
}

ParameterSet extract_grads(const ad::Tape& tape, const ParamVars& pv,
                           const ParameterSet& params) {
  ParameterSet grads;
  for (size_t i = 0; i < params.size(); ++i)
    grads.add(params.entries()[i].name, tape.grad(pv.vars[i]));
  return grads;
}

AdamOptimizer::AdamOptimizer(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(ParameterSet& params, const ParameterSet& grads) {
  if (grads.size() != params.size())
    throw UsageError("adam: gradient/parameter shape mismatch");
  if (moments_.empty()) {
    moments_.reserve(params.size());
    for (const auto& e : params.entries())
      moments_.emplace_back(Mat::Zero(e.value.rows(), e.value.cols()),
                            Mat::Zero(e.value.rows(), e.value.cols()));
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < params.size(); ++i) {
    Mat& p = params.entries()[i].value;
    const Mat& g = grads.entries()[i].value;
    Mat& m = moments_[i].first;
    Mat& v = moments_[i].second;
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p -= lr_ * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
  }
}

namespace {
Mat glorot(Rng& rng, int fan_in, int fan_out, int rows, int cols) {
  double a = std::sqrt(6.0 / (fan_in + fan_out));
  return uniform_matrix(rng, rows, cols, -a, a);
}
}  // namespace

void mlp_init(ParameterSet& ps, const std::string& prefix, const MlpSpec& spec,
              Rng& rng) {
  if (spec.in <= 0 || spec.out <= 0)
    throw ConfigError("mlp: widths must be positive for " + prefix);
  if (spec.hidden == 0) {
    ps.add(prefix + ".w", glorot(rng, spec.in, spec.out, spec.in, spec.out));
    ps.add(prefix + ".b", Mat::Zero(1, spec.out));
    return;
  }
  ps.add(prefix + ".w1", glorot(rng, spec.in, spec.hidden, spec.in, spec.hidden));
  ps.add(prefix + ".b1", Mat::Zero(1, spec.hidden));
  ps.add(prefix + ".w2",
         glorot(rng, spec.hidden, spec.out, spec.hidden, spec.out));
  ps.add(prefix + ".b2", Mat::Zero(1, spec.out));
}

Mat mlp_forward(const ParameterSet& ps, const std::string& prefix,
                const MlpSpec& spec, const Mat& x) {
  if (x.cols() != spec.in)
    throw UsageError("mlp " + prefix + ": input width " +
                     std::to_string(x.cols()) + " != " +
                     std::to_string(spec.in));
  if (spec.hidden == 0) {
    Mat z = x * ps.at(prefix + ".w");
    return z.rowwise() + ps.at(prefix + ".b").row(0);
  }
  Mat h = x * ps.at(prefix + ".w1");
  h.rowwise() += ps.at(prefix + ".b1").row(0);
  if (spec.tanh_hidden)
    h = h.array().tanh();
  else
    h = h.cwiseMax(0.0);
  Mat z = h * ps.at(prefix + ".w2");
  return z.rowwise() + ps.at(prefix + ".b2").row(0);
}

ad::Var mlp_forward_t(ad::Tape& tape, const ParamVars& pv,
                      const std::string& prefix, const MlpSpec& spec,
                      ad::Var x) {
  if (tape.value(x).cols() != spec.in)
    throw UsageError("mlp " + prefix + ": input width mismatch");
  if (spec.hidden == 0) {
    ad::Var z = tape.matmul(x, pv.at(prefix + ".w"));
    return tape.add_rowvec(z, pv.at(prefix + ".b"));
  }
  ad::Var h = tape.matmul(x, pv.at(prefix + ".w1"));
  h = tape.add_rowvec(h, pv.at(prefix + ".b1"));
  h = spec.tanh_hidden ? tape.tanh(h) : tape.relu(h);
  ad::Var z = tape.matmul(h, pv.at(prefix + ".w2"));
  return tape.add_rowvec(z, pv.at(prefix + ".b2"));
}

}  // namespace gdda
