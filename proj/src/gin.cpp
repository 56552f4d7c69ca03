#include "gdda/gin.hpp"

namespace gdda {

void GinConfig::validate() const {
  if (d_in < 1 || d_out < 1) throw ConfigError("gin: feature widths must be >= 1");
  if (hidden < 0) throw ConfigError("gin: negative hidden width");
  if (num_layers < 1) throw ConfigError("gin: need at least one layer");
}

namespace {

MlpSpec layer_spec(const GinConfig& cfg, int layer) {
  MlpSpec spec;
  spec.in = layer == 0 ? cfg.d_in : cfg.d_out;
  spec.hidden = cfg.hidden;
  spec.out = cfg.d_out;
  return spec;
}

std::string layer_prefix(int layer) {
  return "gin.l" + std::to_string(layer);
}

// (A + (1+eps) I) X implements per-node (1+eps) x_v + sum of neighbors.
Eigen::MatrixXd aggregation(const GraphInstance& g, double eps) {
  int n = g.num_nodes();
  Eigen::MatrixXd agg = g.adjacency.cast<double>();
  agg.diagonal().array() += 1.0 + eps;
  return agg;
}

}  // namespace

ParameterSet gin_init(const GinConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet ps;
  for (int l = 0; l < cfg.num_layers; ++l)
    mlp_init(ps, layer_prefix(l), layer_spec(cfg, l), rng);
  return ps;
}

Eigen::MatrixXd gin_forward(const GinConfig& cfg, const ParameterSet& params,
                            const GraphInstance& g) {
  if (g.node_features.cols() != cfg.d_in)
    throw UsageError("gin_forward: graph " + g.instance_id + " has " +
                     std::to_string(g.node_features.cols()) +
                     " feature columns, backbone expects " +
                     std::to_string(cfg.d_in));
  Eigen::MatrixXd x = g.node_features;
  for (int l = 0; l < cfg.num_layers; ++l) {
    x = aggregation(g, cfg.eps) * x;
    x = mlp_forward(params, layer_prefix(l), layer_spec(cfg, l), x);
  }
  Eigen::MatrixXd pooled = x.colwise().sum();
  if (cfg.mean_readout) pooled /= static_cast<double>(g.num_nodes());
  return pooled;
}

ad::Var gin_forward_t(const GinConfig& cfg, ad::Tape& tape,
                      const ParamVars& params, const GraphInstance& g) {
  if (g.node_features.cols() != cfg.d_in)
    throw UsageError("gin_forward_t: graph " + g.instance_id + " has " +
                     std::to_string(g.node_features.cols()) +
                     " feature columns, backbone expects " +
                     std::to_string(cfg.d_in));
  ad::Var x = tape.constant(g.node_features);
  for (int l = 0; l < cfg.num_layers; ++l) {
    ad::Var agg = tape.constant(aggregation(g, cfg.eps));
    x = tape.matmul(agg, x);
    x = mlp_forward_t(tape, params, layer_prefix(l), layer_spec(cfg, l), x);
  }
  ad::Var pooled = tape.colsum(x);
  if (cfg.mean_readout)
    pooled = tape.scale(pooled, 1.0 / static_cast<double>(g.num_nodes()));
  return pooled;
}

Eigen::MatrixXd gin_forward_batch(const GinConfig& cfg,
                                  const ParameterSet& params,
                                  const std::vector<GraphInstance>& graphs) {
  Eigen::MatrixXd reps(static_cast<Eigen::Index>(graphs.size()), cfg.d_out);
  for (size_t i = 0; i < graphs.size(); ++i)
    reps.row(static_cast<Eigen::Index>(i)) = gin_forward(cfg, params, graphs[i]);
  return reps;
}

ParameterSet head_init(const MlpSpec& spec, Rng& rng) {
  ParameterSet ps;
  mlp_init(ps, "head", spec, rng);
  return ps;
}

Eigen::MatrixXd classify_head(const ParameterSet& params, const MlpSpec& spec,
                              const Eigen::MatrixXd& h) {
  return mlp_forward(params, "head", spec, h);
}

ad::Var classify_head_t(ad::Tape& tape, const ParamVars& params,
                        const MlpSpec& spec, ad::Var h) {
  return mlp_forward_t(tape, params, "head", spec, h);
}

}  // namespace gdda
