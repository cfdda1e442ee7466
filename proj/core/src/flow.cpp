#include "piflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace piflow {

namespace {

void check_finite(const Matrix& m, const char* what, int layer_index) {
  if (!m.allFinite())
    throw std::runtime_error(std::string("flow: non-finite ") + what + " output in coupling layer " +
                             std::to_string(layer_index));
}

// Soft cap on the log-scale output: exact identity on [-5, 5], smooth
// saturation to +-10 beyond. Keeps exp(+-s) bounded so value explosions
// cannot feed back through stacked inverse passes, while leaving every
// moderately-scaled model untouched. tanh is computed in its e^{-2u}
// form since the argument is nonnegative.
Value clamp_scale(Tape& tape, Value s) {
  const double a = 5.0, c = 5.0;
  auto sat = [&](Value u) {
    Value em = tape.exp(tape.scale(u, -2.0 / c));
    Value t = tape.mul(tape.add_scalar(tape.neg(em), 1.0),
                       tape.reciprocal(tape.add_scalar(em, 1.0)));
    return tape.scale(t, c);
  };
  Value ep = tape.relu(tape.add_scalar(s, -a));
  Value en = tape.relu(tape.add_scalar(tape.neg(s), -a));
  Value hard = tape.add(tape.sub(s, ep), en);
  return tape.add(hard, tape.sub(sat(ep), sat(en)));
}

std::vector<int> inverse_perm(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) inv[p[k]] = static_cast<int>(k);
  return inv;
}

}  // namespace

CouplingLayer coupling_create(ParamStore& store, const std::string& prefix, int F, int f,
                              int hidden_width, int n_hidden, std::mt19937_64& rng) {
  if (f < 1 || f >= F) throw std::invalid_argument("coupling_create: need 1 <= f < F");
  std::vector<int> widths;
  widths.push_back(f);
  for (int i = 0; i < n_hidden; ++i) widths.push_back(hidden_width);
  widths.push_back(F - f);
  CouplingLayer layer;
  layer.F = F;
  layer.f = f;
  layer.s_net = mlp_create(store, prefix + ".s", widths, rng, /*zero_last=*/true);
  layer.t_net = mlp_create(store, prefix + ".t", widths, rng, /*zero_last=*/true);
  return layer;
}

FlowModel flow_create(ParamStore& store, const std::string& prefix, int F, int P,
                      int n_layers, int hidden_width, int n_hidden, uint64_t seed) {
  if (P < 1 || P >= F) throw std::invalid_argument("flow_create: need 1 <= P < F");
  FlowModel m;
  m.F = F;
  m.P = P;
  std::mt19937_64 rng(seed);
  for (int l = 0; l < n_layers; ++l) {
    std::vector<int> perm(F);
    for (int k = 0; k < F; ++k) perm[k] = k;
    std::shuffle(perm.begin(), perm.end(), rng);
    m.perms.push_back(std::move(perm));
    m.layers.push_back(coupling_create(store, prefix + ".layer" + std::to_string(l), F, F / 2,
                                       hidden_width, n_hidden, rng));
  }
  return m;
}

FlowOut coupling_forward(Tape& tape, const ParamBind& bind, const CouplingLayer& layer,
                         Value H, int layer_index) {
  if (tape.val(H).cols() != layer.F)
    throw std::invalid_argument("coupling_forward: input width mismatch");
  Value h1 = tape.cols(H, 0, layer.f);
  Value h2 = tape.cols(H, layer.f, layer.F - layer.f);
  Value s = clamp_scale(tape, mlp_forward(tape, bind, layer.s_net, h1));
  check_finite(tape.val(s), "scale", layer_index);
  Value t = mlp_forward(tape, bind, layer.t_net, h1);
  Value v2 = tape.add(tape.mul(h2, tape.exp(s)), t);
  return {tape.hcat(h1, v2), tape.row_sum(s)};
}

FlowOut coupling_inverse(Tape& tape, const ParamBind& bind, const CouplingLayer& layer,
                         Value V, int layer_index) {
  if (tape.val(V).cols() != layer.F)
    throw std::invalid_argument("coupling_inverse: input width mismatch");
  Value v1 = tape.cols(V, 0, layer.f);
  Value v2 = tape.cols(V, layer.f, layer.F - layer.f);
  Value s = clamp_scale(tape, mlp_forward(tape, bind, layer.s_net, v1));
  check_finite(tape.val(s), "scale", layer_index);
  Value t = mlp_forward(tape, bind, layer.t_net, v1);
  Value h2 = tape.mul(tape.sub(v2, t), tape.exp(tape.neg(s)));
  return {tape.hcat(v1, h2), tape.neg(tape.row_sum(s))};
}

FlowOut flow_forward(Tape& tape, const ParamBind& bind, const FlowModel& model, Value lambda) {
  if (tape.val(lambda).cols() != model.F)
    throw std::invalid_argument("flow_forward: input width mismatch");
  Value h = lambda;
  Value logdet = tape.constant(Matrix::Zero(tape.val(lambda).rows(), 1));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    h = tape.permute_cols(h, model.perms[l]);
    FlowOut out = coupling_forward(tape, bind, model.layers[l], h, static_cast<int>(l));
    h = out.y;
    logdet = tape.add(logdet, out.logdet);
  }
  return {h, logdet};
}

FlowOut flow_inverse(Tape& tape, const ParamBind& bind, const FlowModel& model,
                     Value c, Value z) {
  if (tape.val(c).cols() != model.P || tape.val(z).cols() != model.F - model.P)
    throw std::invalid_argument("flow_inverse: (c, z) split mismatch");
  Value h = tape.hcat(c, z);
  Value logdet = tape.constant(Matrix::Zero(tape.val(h).rows(), 1));
  for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
    FlowOut out = coupling_inverse(tape, bind, model.layers[l], h, l);
    h = tape.permute_cols(out.y, inverse_perm(model.perms[l]));
    logdet = tape.add(logdet, out.logdet);
  }
  return {h, logdet};
}

Matrix flow_forward_eval(const ParamStore& store, const FlowModel& model, const Matrix& lambda,
                         Eigen::VectorXd* logdet) {
  Tape tape;
  ParamBind bind = ParamBind::make(tape, store);
  FlowOut out = flow_forward(tape, bind, model, tape.constant(lambda));
  if (logdet) *logdet = tape.val(out.logdet).col(0);
  return tape.val(out.y);
}

Matrix flow_inverse_eval(const ParamStore& store, const FlowModel& model, const Matrix& c,
                         const Matrix& z) {
  Tape tape;
  ParamBind bind = ParamBind::make(tape, store);
  FlowOut out = flow_inverse(tape, bind, model, tape.constant(c), tape.constant(z));
  return tape.val(out.y);
}

Value std_normal_logpdf(Tape& tape, Value X) {
  const double d = static_cast<double>(tape.val(X).cols());
  Value q = tape.row_sum(tape.square(X));
  return tape.add_scalar(tape.scale(q, -0.5), -0.5 * d * std::log(2.0 * std::numbers::pi));
}

double std_normal_logpdf(const Eigen::VectorXd& x) {
  return -0.5 * x.squaredNorm() - 0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

Value log_q_joint(Tape& tape, const ParamBind& bind, const FlowModel& model,
                  const LogDensityFn& log_prior, Value c, Value z) {
  FlowOut inv = flow_inverse(tape, bind, model, c, z);
  return tape.add(log_prior(tape, inv.y), inv.logdet);
}

}  // namespace piflow
