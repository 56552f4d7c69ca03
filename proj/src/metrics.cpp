#include "gdda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <Eigen/Eigenvalues>

namespace gdda {

namespace {

void require_both_sides(const ScoredSet& ss, const char* op) {
  if (ss.ind_scores.empty() || ss.ood_scores.empty())
    throw UsageError(std::string(op) + ": need nonempty InD and OOD scores");
  for (double v : ss.ind_scores)
    if (!std::isfinite(v)) throw UsageError(std::string(op) + ": non-finite score");
  for (double v : ss.ood_scores)
    if (!std::isfinite(v)) throw UsageError(std::string(op) + ": non-finite score");
}

}  // namespace

double auroc(const ScoredSet& ss) {
  require_both_sides(ss, "auroc");
  std::vector<double> ind = ss.ind_scores;
  std::sort(ind.begin(), ind.end());
  double wins = 0.0;
  for (double o : ss.ood_scores) {
    // #ind strictly below + half the ties, via two binary searches
    auto lo = std::lower_bound(ind.begin(), ind.end(), o);
    auto hi = std::upper_bound(ind.begin(), ind.end(), o);
    wins += static_cast<double>(lo - ind.begin()) +
            0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(ind.size()) *
                 static_cast<double>(ss.ood_scores.size()));
}

double aupr(const ScoredSet& ss) {
  require_both_sides(ss, "aupr");
  std::set<double, std::greater<double>> thresholds(ss.ood_scores.begin(),
                                                    ss.ood_scores.end());
  thresholds.insert(ss.ind_scores.begin(), ss.ind_scores.end());
  std::vector<double> ind = ss.ind_scores, ood = ss.ood_scores;
  std::sort(ind.begin(), ind.end());
  std::sort(ood.begin(), ood.end());
  auto count_at_least = [](const std::vector<double>& v, double t) {
    return static_cast<double>(v.end() -
                               std::lower_bound(v.begin(), v.end(), t));
  };
  double m = static_cast<double>(ood.size());
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = count_at_least(ood, t);
    double fp = count_at_least(ind, t);
    double recall = tp / m;
    if (tp + fp > 0.0) area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

double fpr_at_95tpr(const ScoredSet& ss) {
  require_both_sides(ss, "fpr_at_95tpr");
  std::vector<double> ood = ss.ood_scores;
  std::sort(ood.begin(), ood.end(), std::greater<double>());
  size_t m = ood.size();
  size_t k = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(m)));
  double threshold = ood[std::min(k, m) - 1];  // k-th largest
  double fp = 0.0;
  for (double v : ss.ind_scores)
    if (v >= threshold) fp += 1.0;
  return fp / static_cast<double>(ss.ind_scores.size());
}

double ind_accuracy(const ScoredSet& ss) {
  if (ss.ind_correct.empty())
    throw UsageError("ind_accuracy: empty correctness list");
  double acc = 0.0;
  for (bool b : ss.ind_correct) acc += b ? 1.0 : 0.0;
  return acc / static_cast<double>(ss.ind_correct.size());
}

std::vector<ProjectedPoint> project_2d(
    const std::vector<std::pair<Eigen::MatrixXd, std::string>>& groups) {
  Eigen::Index total = 0, d = -1;
  for (const auto& [mat, kind] : groups) {
    total += mat.rows();
    if (mat.rows() > 0) {
      if (d < 0) d = mat.cols();
      if (mat.cols() != d)
        throw UsageError("project_2d: groups have mixed widths");
    }
  }
  if (total < 2) throw UsageError("project_2d: need at least 2 vectors");

  Eigen::MatrixXd pooled(total, d);
  Eigen::Index row = 0;
  for (const auto& [mat, kind] : groups) {
    pooled.middleRows(row, mat.rows()) = mat;
    row += mat.rows();
  }
  Eigen::RowVectorXd mean = pooled.colwise().mean();
  pooled.rowwise() -= mean;
  Eigen::MatrixXd cov =
      pooled.transpose() * pooled / static_cast<double>(total - 1);
  if (cov.cwiseAbs().maxCoeff() == 0.0)
    throw NumericError("project_2d: degenerate (rank-0) point set");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // eigenvalues ascend; take the last two columns as the top directions
  Eigen::MatrixXd basis(d, 2);
  basis.col(0) = eig.eigenvectors().col(d - 1);
  if (d >= 2)
    basis.col(1) = eig.eigenvectors().col(d - 2);
  else
    basis.col(1).setZero();
  for (int j = 0; j < 2; ++j) {
    if (basis.col(j).cwiseAbs().maxCoeff() == 0.0) continue;
    Eigen::Index imax;
    basis.col(j).cwiseAbs().maxCoeff(&imax);
    if (basis(imax, j) < 0.0) basis.col(j) = -basis.col(j);
  }

  Eigen::MatrixXd coords = pooled * basis;
  std::vector<ProjectedPoint> out;
  out.reserve(static_cast<size_t>(total));
  row = 0;
  for (const auto& [mat, kind] : groups)
    for (Eigen::Index i = 0; i < mat.rows(); ++i, ++row)
      out.push_back({coords(row, 0), coords(row, 1), kind});
  return out;
}

void write_projection_csv(const std::vector<ProjectedPoint>& points,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write projection: " + path.string());
  out << "x,y,kind\n";
  for (const ProjectedPoint& p : points)
    out << p.x << "," << p.y << "," << p.kind << "\n";
}

}  // namespace gdda
