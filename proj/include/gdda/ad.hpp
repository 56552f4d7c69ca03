#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

#include "gdda/common.hpp"

namespace gdda::ad {

using Mat = Eigen::MatrixXd;

class Tape;

// Handle to a node on a Tape. Cheap to copy; dies with its tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Eager reverse-mode tape over Eigen matrices. Values are computed at op
// creation; backward() walks the tape in reverse and accumulates gradients
// into every gradient-tracked leaf. One tape per loss evaluation.
class Tape {
 public:
  Var constant(Mat v);
  Var leaf(Mat v);  // gradient-tracked

  const Mat& value(Var v) const;
  const Mat& grad(Var v) const;
  double scalar(Var v) const;  // value of a 1x1 node

  // Seeds d(root)/d(root) = 1 and accumulates into all leaves. root must be
  // 1x1. Clears any gradients from a previous backward pass.
  void backward(Var root);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var neg(Var a);
  Var scale(Var a, double k);
  Var add_scalar(Var a, double k);
  Var hadamard(Var a, Var b);
  Var matmul(Var a, Var b);
  Var add_rowvec(Var m, Var row);  // row broadcast over the rows of m
  Var relu(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var clamp_min(Var a, double floor);
  Var sum(Var a);       // 1x1
  Var mean(Var a);      // 1x1
  Var mean_abs(Var a);  // 1x1
  Var sum_sq(Var a);    // 1x1
  Var colsum(Var a);    // 1xC
  Var colmean(Var a);   // 1xC
  Var hcat(Var a, Var b);
  Var vcat(const std::vector<Var>& rows);
  Var slice_cols(Var a, int start, int width);
  Var log_softmax_rows(Var a);
  Var logsumexp_rows(Var a);  // Nx1
  Var pick(Var a, int r, int c);
  // Maximum over 1x1 nodes; gradient routes to the first argmax.
  Var max_of(const std::vector<Var>& scalars, int* argmax = nullptr);
  // Mean cross-entropy of row logits against integer labels.
  Var ce_mean(Var logits, const std::vector<int>& labels);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, const Mat&)> back;  // upstream grad -> parents
  };

  std::vector<Node> nodes_;

  int push(Mat value, bool requires_grad,
           std::function<void(Tape&, const Mat&)> back);
  void accumulate(int id, const Mat& g);
  const Mat& val(int id) const { return nodes_[id].value; }
  Var wrap(int id) { return Var{this, id}; }
  void check(Var v) const;
};

}  // namespace gdda::ad
