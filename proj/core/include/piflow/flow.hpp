#pragma once

#include <functional>

#include "piflow/mlp.hpp"

namespace piflow {

/// Affine coupling layer: the first f coordinates pass through, the
/// remaining F-f are scaled/shifted by nets of the first block. The
/// log-det of the forward Jacobian is the row sum of the scale output.
struct CouplingLayer {
  int F = 0;
  int f = 0;
  MlpHandle s_net, t_net;
};

/// Stack of coupling layers with a fixed column permutation before each
/// layer. Output is split as (c, z) = (first P, remaining F-P).
struct FlowModel {
  int F = 0;
  int P = 0;
  std::vector<CouplingLayer> layers;
  std::vector<std::vector<int>> perms;
};

CouplingLayer coupling_create(ParamStore& store, const std::string& prefix, int F, int f,
                              int hidden_width, int n_hidden, std::mt19937_64& rng);

/// n_layers couplings with split f = F/2 and seed-derived permutations.
FlowModel flow_create(ParamStore& store, const std::string& prefix, int F, int P,
                      int n_layers, int hidden_width, int n_hidden, uint64_t seed);

struct FlowOut {
  Value y;       // N x F
  Value logdet;  // N x 1
};

FlowOut coupling_forward(Tape& tape, const ParamBind& bind, const CouplingLayer& layer,
                         Value H, int layer_index = -1);
FlowOut coupling_inverse(Tape& tape, const ParamBind& bind, const CouplingLayer& layer,
                         Value V, int layer_index = -1);

/// lambda (N x F) -> [c | z] with accumulated forward log-det.
FlowOut flow_forward(Tape& tape, const ParamBind& bind, const FlowModel& model, Value lambda);

/// (c, z) -> lambda with the log-det of the inverse map (the negative of
/// the forward log-det at the mapped point).
FlowOut flow_inverse(Tape& tape, const ParamBind& bind, const FlowModel& model,
                     Value c, Value z);

/// Convenience non-tape evaluation on a scratch tape.
Matrix flow_forward_eval(const ParamStore& store, const FlowModel& model, const Matrix& lambda,
                         Eigen::VectorXd* logdet = nullptr);
Matrix flow_inverse_eval(const ParamStore& store, const FlowModel& model, const Matrix& c,
                         const Matrix& z);

/// Row-wise log density N(0, I): N x d -> N x 1.
Value std_normal_logpdf(Tape& tape, Value X);
double std_normal_logpdf(const Eigen::VectorXd& x);

/// log p_lambda over a batch (N x F) -> (N x 1), differentiable in the
/// batch when it is a tape value.
using LogDensityFn = std::function<Value(Tape&, Value)>;

/// Joint density of the flow output under the pulled-back prior:
/// log q(c, z) = log p_lambda(g^{-1}(c,z)) + logdet of the inverse map.
Value log_q_joint(Tape& tape, const ParamBind& bind, const FlowModel& model,
                  const LogDensityFn& log_prior, Value c, Value z);

}  // namespace piflow
