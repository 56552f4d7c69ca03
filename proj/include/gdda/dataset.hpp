#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "gdda/common.hpp"

namespace gdda {

// One attributed graph with a class label and a domain id.
struct GraphInstance {
  Eigen::MatrixXd node_features;  // |V| x d_in
  Eigen::MatrixXi adjacency;      // |V| x |V|, symmetric 0/1, zero diagonal
  int label = 0;
  int domain = 0;
  std::string instance_id;

  int num_nodes() const { return static_cast<int>(adjacency.rows()); }
  // Throws IoError naming instance_id on any invariant violation.
  void validate(int num_classes, int num_domains) const;

  bool operator==(const GraphInstance& other) const;
};

// Declarative description of the synthetic shifted-graph benchmark:
// class -> topology motif, domain -> additive node-feature style offset.
struct BenchmarkSpec {
  std::vector<int> known_classes;
  std::vector<int> unknown_classes;
  std::vector<int> train_domains;
  std::vector<int> test_domains;
  int graphs_per_cell = 1;
  int nodes_min = 3;
  int nodes_max = 3;
  std::vector<Eigen::VectorXd> style_vectors;  // one per domain id
  double noise_scale = 0.0;
  uint64_t seed = 0;

  int num_classes() const;  // max class id + 1
  int num_domains() const;  // max domain id + 1
  int d_in() const;
  void validate() const;  // throws ConfigError
};

struct DatasetSplit {
  std::vector<GraphInstance> train;     // known classes x train domains
  std::vector<GraphInstance> test_ind;  // known classes x test domains
  std::vector<GraphInstance> test_ood;  // unknown classes x test domains
  int d_in = 0;
  int num_classes = 0;
  int num_domains = 0;

  bool operator==(const DatasetSplit& other) const;
};

// Scaled one-hot class signature over the first num_classes coordinates.
Eigen::VectorXd class_signature(int label, int num_classes, int d_in);
constexpr double kSignatureScale = 3.0;

// Motif family per class: 0 cycle, 1 path, 2 complete, 3 star, k>=4 cycle
// plus k chords in a fixed enumeration order.
Eigen::MatrixXi motif_adjacency(int label, int n);

// Pure function of the spec; per-instance seeds derive from (seed, index).
DatasetSplit generate_benchmark(const BenchmarkSpec& spec);

// UTF-8 JSONL: header record then one record per graph.
void save_dataset(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_dataset(const std::filesystem::path& path);

}  // namespace gdda
