#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gdda/common.hpp"

namespace gdda {

// Detection scores with OOD as the positive class: higher score = more OOD.
struct ScoredSet {
  std::vector<double> ind_scores;
  std::vector<double> ood_scores;
  std::vector<bool> ind_correct;  // classifier correctness, aligned with
                                  // ind_scores
};

// Probability a random OOD score exceeds a random InD score, ties worth 1/2.
double auroc(const ScoredSet& ss);

// Area under precision-recall via threshold enumeration over the distinct
// scores (descending); at a tied score the InD items count against precision
// (pessimistic: both sides clear the >= threshold together).
double aupr(const ScoredSet& ss);

// FPR at the largest threshold t keeping >= 95% of OOD scores at or above t
// (t is the ceil(0.95 m)-th largest OOD score).
double fpr_at_95tpr(const ScoredSet& ss);

double ind_accuracy(const ScoredSet& ss);

// Labeled 2-D projection rows for plotting pseudo vs original representations.
struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  std::string kind;
};

// Centers the pooled vectors and projects onto the top-2 principal
// directions. Sign convention: each direction's largest-magnitude loading is
// made positive, so the layout is order-independent.
std::vector<ProjectedPoint> project_2d(
    const std::vector<std::pair<Eigen::MatrixXd, std::string>>& groups);

void write_projection_csv(const std::vector<ProjectedPoint>& points,
                          const std::filesystem::path& path);

}  // namespace gdda
