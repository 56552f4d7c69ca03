#pragma once

#include <string>
#include <vector>

#include "gdda/ad.hpp"
#include "gdda/dataset.hpp"
#include "gdda/params.hpp"

namespace gdda {

// Graph-isomorphism-network backbone producing one pooled representation
// per graph: each layer applies MLP((1+eps) x_v + sum of neighbor features),
// readout sums (or averages) node embeddings.
struct GinConfig {
  int d_in = 8;
  int hidden = 32;
  int d_out = 16;
  int num_layers = 2;
  double eps = 0.0;
  bool mean_readout = false;

  void validate() const;
};

// Layer parameter names are "gin.l{k}.w1" etc., so the backbone can live in
// one ParameterSet next to other model sections.
ParameterSet gin_init(const GinConfig& cfg, Rng& rng);

// Plain forward of one graph, returning the pooled row vector (1 x d_out).
Eigen::MatrixXd gin_forward(const GinConfig& cfg, const ParameterSet& params,
                            const GraphInstance& g);

// Tape forward of one graph for end-to-end training.
ad::Var gin_forward_t(const GinConfig& cfg, ad::Tape& tape,
                      const ParamVars& params, const GraphInstance& g);

// Batch helper: stack pooled representations of many graphs (rows align
// with the input order).
Eigen::MatrixXd gin_forward_batch(const GinConfig& cfg,
                                  const ParameterSet& params,
                                  const std::vector<GraphInstance>& graphs);

// Classification head mapping representations (rows) to class logits; the
// parameter section is named "head". hidden == 0 gives a plain affine map.
ParameterSet head_init(const MlpSpec& spec, Rng& rng);
Eigen::MatrixXd classify_head(const ParameterSet& params, const MlpSpec& spec,
                              const Eigen::MatrixXd& h);
ad::Var classify_head_t(ad::Tape& tape, const ParamVars& params,
                        const MlpSpec& spec, ad::Var h);

}  // namespace gdda
