#include "gdda/ad.hpp"

#include <cmath>
#include <utility>

namespace gdda::ad {

void Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw UsageError("ad: Var does not belong to this tape");
}

int Tape::push(Mat value, bool requires_grad,
               std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  n.grad += g;
}

Var Tape::constant(Mat v) { return wrap(push(std::move(v), false, nullptr)); }

Var Tape::leaf(Mat v) { return wrap(push(std::move(v), true, nullptr)); }

const Mat& Tape::value(Var v) const {
  check(v);
  return nodes_[v.id].value;
}

const Mat& Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  if (!n.has_grad) {
    static const Mat empty;
    if (!n.requires_grad)
      throw UsageError("ad: gradient requested for a constant");
    // leaf never reached by backward: zero gradient
    const_cast<Node&>(n).grad = Mat::Zero(n.value.rows(), n.value.cols());
    const_cast<Node&>(n).has_grad = true;
    (void)empty;
  }
  return n.grad;
}

double Tape::scalar(Var v) const {
  check(v);
  const Mat& m = nodes_[v.id].value;
  if (m.rows() != 1 || m.cols() != 1)
    throw UsageError("ad: scalar() called on a non-1x1 node");
  return m(0, 0);
}

void Tape::backward(Var root) {
  check(root);
  const Mat& rv = nodes_[root.id].value;
  if (rv.rows() != 1 || rv.cols() != 1)
    throw UsageError("ad: backward root must be 1x1");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root.id, Mat::Ones(1, 1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad || !n.back) continue;
    n.back(*this, n.grad);
  }
}

namespace {
void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw UsageError(std::string("ad: shape mismatch in ") + op);
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(val(a.id), val(b.id), "add");
  bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ia = a.id, ib = b.id;
  return wrap(push(val(ia) + val(ib), rg, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  }));
}

Var Tape::sub(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(val(a.id), val(b.id), "sub");
  bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ia = a.id, ib = b.id;
  return wrap(push(val(ia) - val(ib), rg, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  }));
}

Var Tape::neg(Var a) {
  check(a);
  int ia = a.id;
  return wrap(push(-val(ia), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) { t.accumulate(ia, -g); }));
}

Var Tape::scale(Var a, double k) {
  check(a);
  int ia = a.id;
  return wrap(push(k * val(ia), nodes_[ia].requires_grad,
                   [ia, k](Tape& t, const Mat& g) { t.accumulate(ia, k * g); }));
}

Var Tape::add_scalar(Var a, double k) {
  check(a);
  int ia = a.id;
  return wrap(push(val(ia).array() + k, nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) { t.accumulate(ia, g); }));
}

Var Tape::hadamard(Var a, Var b) {
  check(a);
  check(b);
  require_same_shape(val(a.id), val(b.id), "hadamard");
  bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ia = a.id, ib = b.id;
  return wrap(push(val(ia).cwiseProduct(val(ib)), rg,
                   [ia, ib](Tape& t, const Mat& g) {
                     t.accumulate(ia, g.cwiseProduct(t.val(ib)));
                     t.accumulate(ib, g.cwiseProduct(t.val(ia)));
                   }));
}

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  if (val(a.id).cols() != val(b.id).rows())
    throw UsageError("ad: inner dimension mismatch in matmul");
  bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ia = a.id, ib = b.id;
  return wrap(push(val(ia) * val(ib), rg, [ia, ib](Tape& t, const Mat& g) {
    t.accumulate(ia, g * t.val(ib).transpose());
    t.accumulate(ib, t.val(ia).transpose() * g);
  }));
}

Var Tape::add_rowvec(Var m, Var row) {
  check(m);
  check(row);
  const Mat& mv = val(m.id);
  const Mat& rv = val(row.id);
  if (rv.rows() != 1 || rv.cols() != mv.cols())
    throw UsageError("ad: add_rowvec expects a 1xC row matching the matrix");
  bool rg = nodes_[m.id].requires_grad || nodes_[row.id].requires_grad;
  int im = m.id, ir = row.id;
  Mat out = mv.rowwise() + rv.row(0);
  return wrap(push(std::move(out), rg, [im, ir](Tape& t, const Mat& g) {
    t.accumulate(im, g);
    t.accumulate(ir, g.colwise().sum());
  }));
}

Var Tape::relu(Var a) {
  check(a);
  int ia = a.id;
  return wrap(push(val(ia).cwiseMax(0.0), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) {
                     Mat mask = (t.val(ia).array() > 0.0).cast<double>();
                     t.accumulate(ia, g.cwiseProduct(mask));
                   }));
}

Var Tape::tanh(Var a) {
  check(a);
  int ia = a.id;
  Mat y = val(ia).array().tanh();
  int self = push(std::move(y), nodes_[ia].requires_grad, nullptr);
  nodes_[self].back = [ia, self](Tape& t, const Mat& g) {
    Mat y2 = t.val(self).array().square();
    t.accumulate(ia, g.cwiseProduct((1.0 - y2.array()).matrix()));
  };
  return wrap(self);
}

Var Tape::exp(Var a) {
  check(a);
  int ia = a.id;
  Mat y = val(ia).array().exp();
  int self = push(std::move(y), nodes_[ia].requires_grad, nullptr);
  nodes_[self].back = [ia, self](Tape& t, const Mat& g) {
    t.accumulate(ia, g.cwiseProduct(t.val(self)));
  };
  return wrap(self);
}

Var Tape::log(Var a) {
  check(a);
  int ia = a.id;
  return wrap(push(val(ia).array().log(), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) {
                     t.accumulate(ia, g.cwiseQuotient(t.val(ia)));
                   }));
}

Var Tape::clamp_min(Var a, double floor) {
  check(a);
  int ia = a.id;
  return wrap(push(val(ia).cwiseMax(floor), nodes_[ia].requires_grad,
                   [ia, floor](Tape& t, const Mat& g) {
                     Mat mask = (t.val(ia).array() > floor).cast<double>();
                     t.accumulate(ia, g.cwiseProduct(mask));
                   }));
}

Var Tape::sum(Var a) {
  check(a);
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = val(ia).sum();
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) {
                     const Mat& av = t.val(ia);
                     t.accumulate(ia, Mat::Constant(av.rows(), av.cols(), g(0, 0)));
                   }));
}

Var Tape::mean(Var a) {
  check(a);
  double n = static_cast<double>(val(a.id).size());
  return scale(sum(a), 1.0 / n);
}

Var Tape::mean_abs(Var a) {
  check(a);
  int ia = a.id;
  double n = static_cast<double>(val(ia).size());
  Mat y(1, 1);
  y(0, 0) = val(ia).array().abs().mean();
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia, n](Tape& t, const Mat& g) {
                     Mat sgn = t.val(ia).array().sign();
                     t.accumulate(ia, (g(0, 0) / n) * sgn);
                   }));
}

Var Tape::sum_sq(Var a) {
  check(a);
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = val(ia).array().square().sum();
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) {
                     t.accumulate(ia, 2.0 * g(0, 0) * t.val(ia));
                   }));
}

Var Tape::colsum(Var a) {
  check(a);
  int ia = a.id;
  Mat y = val(ia).colwise().sum();
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) {
                     const Mat& av = t.val(ia);
                     t.accumulate(ia, g.replicate(av.rows(), 1));
                   }));
}

Var Tape::colmean(Var a) {
  check(a);
  double n = static_cast<double>(val(a.id).rows());
  return scale(colsum(a), 1.0 / n);
}

Var Tape::hcat(Var a, Var b) {
  check(a);
  check(b);
  const Mat& av = val(a.id);
  const Mat& bv = val(b.id);
  if (av.rows() != bv.rows()) throw UsageError("ad: hcat row mismatch");
  bool rg = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  int ia = a.id, ib = b.id;
  Mat y(av.rows(), av.cols() + bv.cols());
  y << av, bv;
  Eigen::Index wa = av.cols(), wb = bv.cols();
  return wrap(push(std::move(y), rg, [ia, ib, wa, wb](Tape& t, const Mat& g) {
    t.accumulate(ia, g.leftCols(wa));
    t.accumulate(ib, g.rightCols(wb));
  }));
}

Var Tape::vcat(const std::vector<Var>& rows) {
  if (rows.empty()) throw UsageError("ad: vcat of empty list");
  Eigen::Index cols = 0, total = 0;
  bool rg = false;
  for (Var v : rows) {
    check(v);
    const Mat& m = val(v.id);
    if (cols == 0) cols = m.cols();
    if (m.cols() != cols) throw UsageError("ad: vcat column mismatch");
    total += m.rows();
    rg = rg || nodes_[v.id].requires_grad;
  }
  Mat y(total, cols);
  std::vector<std::pair<int, Eigen::Index>> parts;  // (id, row offset)
  Eigen::Index off = 0;
  for (Var v : rows) {
    const Mat& m = val(v.id);
    y.middleRows(off, m.rows()) = m;
    parts.emplace_back(v.id, off);
    off += m.rows();
  }
  return wrap(push(std::move(y), rg,
                   [parts = std::move(parts)](Tape& t, const Mat& g) {
                     for (const auto& [id, row0] : parts) {
                       Eigen::Index nr = t.val(id).rows();
                       t.accumulate(id, g.middleRows(row0, nr));
                     }
                   }));
}

Var Tape::slice_cols(Var a, int start, int width) {
  check(a);
  const Mat& av = val(a.id);
  if (start < 0 || width < 0 || start + width > av.cols())
    throw UsageError("ad: slice_cols out of range");
  int ia = a.id;
  Mat y = av.middleCols(start, width);
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia, start, width](Tape& t, const Mat& g) {
                     const Mat& av2 = t.val(ia);
                     Mat full = Mat::Zero(av2.rows(), av2.cols());
                     full.middleCols(start, width) = g;
                     t.accumulate(ia, full);
                   }));
}

Var Tape::log_softmax_rows(Var a) {
  check(a);
  int ia = a.id;
  const Mat& av = val(ia);
  Mat y(av.rows(), av.cols());
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    double mx = av.row(r).maxCoeff();
    double lse = std::log((av.row(r).array() - mx).exp().sum()) + mx;
    y.row(r) = av.row(r).array() - lse;
  }
  int self = push(std::move(y), nodes_[ia].requires_grad, nullptr);
  nodes_[self].back = [ia, self](Tape& t, const Mat& g) {
    Mat p = t.val(self).array().exp();
    Mat out(g.rows(), g.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      out.row(r) = g.row(r) - p.row(r) * g.row(r).sum();
    t.accumulate(ia, out);
  };
  return wrap(self);
}

Var Tape::logsumexp_rows(Var a) {
  check(a);
  int ia = a.id;
  const Mat& av = val(ia);
  Mat y(av.rows(), 1);
  for (Eigen::Index r = 0; r < av.rows(); ++r) {
    double mx = av.row(r).maxCoeff();
    y(r, 0) = std::log((av.row(r).array() - mx).exp().sum()) + mx;
  }
  int self = push(std::move(y), nodes_[ia].requires_grad, nullptr);
  nodes_[self].back = [ia, self](Tape& t, const Mat& g) {
    const Mat& av2 = t.val(ia);
    const Mat& lse = t.val(self);
    Mat out(av2.rows(), av2.cols());
    for (Eigen::Index r = 0; r < av2.rows(); ++r)
      out.row(r) = g(r, 0) * (av2.row(r).array() - lse(r, 0)).exp();
    t.accumulate(ia, out);
  };
  return wrap(self);
}

Var Tape::pick(Var a, int r, int c) {
  check(a);
  const Mat& av = val(a.id);
  if (r < 0 || c < 0 || r >= av.rows() || c >= av.cols())
    throw UsageError("ad: pick out of range");
  int ia = a.id;
  Mat y(1, 1);
  y(0, 0) = av(r, c);
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia, r, c](Tape& t, const Mat& g) {
                     const Mat& av2 = t.val(ia);
                     Mat full = Mat::Zero(av2.rows(), av2.cols());
                     full(r, c) = g(0, 0);
                     t.accumulate(ia, full);
                   }));
}

Var Tape::max_of(const std::vector<Var>& scalars, int* argmax) {
  if (scalars.empty()) throw UsageError("ad: max_of empty list");
  int best = 0;
  double best_val = scalar(scalars[0]);
  for (size_t i = 1; i < scalars.size(); ++i) {
    double v = scalar(scalars[i]);
    if (v > best_val) {
      best_val = v;
      best = static_cast<int>(i);
    }
  }
  if (argmax != nullptr) *argmax = best;
  int ia = scalars[best].id;
  Mat y(1, 1);
  y(0, 0) = best_val;
  return wrap(push(std::move(y), nodes_[ia].requires_grad,
                   [ia](Tape& t, const Mat& g) { t.accumulate(ia, g); }));
}

Var Tape::ce_mean(Var logits, const std::vector<int>& labels) {
  check(logits);
  const Mat& lv = val(logits.id);
  if (static_cast<Eigen::Index>(labels.size()) != lv.rows())
    throw UsageError("ad: ce_mean labels/rows mismatch");
  for (int y : labels)
    if (y < 0 || y >= lv.cols())
      throw UsageError("ad: ce_mean label out of range");
  Var lsm = log_softmax_rows(logits);
  int il = lsm.id;
  const Mat& lsv = val(il);
  double n = static_cast<double>(lsv.rows());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < lsv.rows(); ++r) loss -= lsv(r, labels[r]);
  Mat y(1, 1);
  y(0, 0) = loss / n;
  return wrap(push(std::move(y), nodes_[il].requires_grad,
                   [il, labels, n](Tape& t, const Mat& g) {
                     const Mat& lsv2 = t.val(il);
                     Mat out = Mat::Zero(lsv2.rows(), lsv2.cols());
                     for (Eigen::Index r = 0; r < lsv2.rows(); ++r)
                       out(r, labels[r]) = -g(0, 0) / n;
                     t.accumulate(il, out);
                   }));
}

}  // namespace gdda::ad
