#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gdda/ad.hpp"
#include "gdda/common.hpp"

namespace gdda {

using Mat = Eigen::MatrixXd;

// Ordered collection of named parameter matrices. Order is the checkpoint
// blob order, so it must be construction-deterministic.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Mat value;
  };

  Mat& add(const std::string& name, Mat init);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool has(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Eigen::Index total_coeffs() const;
  void check_finite(const std::string& context) const;

  // Entries whose name starts with `prefix`, preserving order.
  ParameterSet section(const std::string& prefix) const;
  void merge(const ParameterSet& other);  // appends; duplicate names rejected

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

ParameterSet zeros_like(const ParameterSet& ps);

// Tape leaves mirroring a ParameterSet, aligned by entry order.
struct ParamVars {
  std::vector<ad::Var> vars;
  const ParameterSet* source = nullptr;

  ad::Var at(const std::string& name) const;
};

ParamVars register_params(ad::Tape& tape, const ParameterSet& ps);

// Gradient contract: every loss in this repository is expressed as an
// objective building a 1x1 tape node from parameter leaves.
using Objective = std::function<ad::Var(ad::Tape&, const ParamVars&)>;

struct LossGrads {
  double loss = 0.0;
  ParameterSet grads;
};

LossGrads loss_and_gradients(const Objective& objective,
                             const ParameterSet& params);

// After tape.backward: collect leaf gradients back into ParameterSet shape.
// For training loops that need intermediate values alongside gradients.
ParameterSet extract_grads(const ad::Tape& tape, const ParamVars& pv,
                           const ParameterSet& params);

// Adam with bias correction; the shared optimizer for all training loops.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9,
                         double beta2 = 0.999, double eps = 1e-8);
  void step(ParameterSet& params, const ParameterSet& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::pair<Mat, Mat>> moments_;
};

// --- two-layer perceptron building block ---
// hidden == 0 configures a single affine map. Weights are stored input-major
// (in x out) so row batches compose as X * W + b. tanh_hidden swaps the
// hidden ReLU for tanh, which saturates on far-out inputs — used by the
// detector head so outlier representations cannot produce unbounded logits.
struct MlpSpec {
  int in = 0;
  int hidden = 0;
  int out = 0;
  bool tanh_hidden = false;
};

// Glorot-uniform init; names are prefix + ".w1/.b1/.w2/.b2" (or ".w/.b").
void mlp_init(ParameterSet& ps, const std::string& prefix, const MlpSpec& spec,
              Rng& rng);
Mat mlp_forward(const ParameterSet& ps, const std::string& prefix,
                const MlpSpec& spec, const Mat& x);
ad::Var mlp_forward_t(ad::Tape& tape, const ParamVars& pv,
                      const std::string& prefix, const MlpSpec& spec,
                      ad::Var x);

}  // namespace gdda
