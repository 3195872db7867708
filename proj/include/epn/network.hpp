#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epn/autodiff.hpp"
#include "epn/solver.hpp"
#include "epn/tensor.hpp"

namespace epn::net {

enum class Variant { ep, epn };

inline const char* variant_name(Variant v) { return v == Variant::ep ? "ep" : "epn"; }

inline Variant variant_from_name(const std::string& s) {
  if (s == "ep") return Variant::ep;
  if (s == "epn") return Variant::epn;
  throw std::invalid_argument("unknown variant '" + s + "' (expected ep or epn)");
}

struct ModelConfig {
  Variant variant = Variant::ep;
  std::size_t phases = 3;  // S
  std::size_t nf = 32;
  std::size_t patch = 33;

  void validate() const {
    if (nf < 1) throw std::invalid_argument("ModelConfig: Nf must be positive");
    if (variant == Variant::epn && nf % 2 != 0)
      throw std::invalid_argument("ModelConfig: Nf must be even for the epn variant, got " +
                                  std::to_string(nf));
    if (patch < 1) throw std::invalid_argument("ModelConfig: patch size must be positive");
  }
};

struct NonlocalParams {
  Tensor w_alpha;  // [Nf/2, Nf, 1, 1]
  Tensor w_beta;   // [Nf/2, Nf, 1, 1]
  Tensor w_phi;    // [Nf,   Nf, 1, 1]
  Tensor c_comb;   // [Nf, 2*Nf, 1, 1]
};

/// All learnable quantities of one phase. Both residual branches of a phase
/// read the same instance.
struct PhaseParams {
  Tensor d;        // [Nf, 1, 3, 3]
  Tensor a;        // [Nf, Nf, 3, 3]
  Tensor b;        // [Nf, Nf, 3, 3]
  Tensor b_tilde;  // [Nf, Nf, 3, 3]
  Tensor a_tilde;  // [Nf, Nf, 3, 3]
  Tensor d_tilde;  // [1, Nf, 3, 3]
  Tensor theta;    // [Nf]
  double gamma = 0.0;
  double alpha = 0.1;
  double beta = 0.1;
  std::optional<NonlocalParams> nonlocal;

  std::size_t parameter_count() const {
    std::size_t c = d.size() + a.size() + b.size() + b_tilde.size() + a_tilde.size() +
                    d_tilde.size() + theta.size() + 3;
    if (nonlocal) {
      c += nonlocal->w_alpha.size() + nonlocal->w_beta.size() + nonlocal->w_phi.size() +
           nonlocal->c_comb.size();
    }
    return c;
  }
};

inline PhaseParams make_phase_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t nf = cfg.nf;
  PhaseParams p;
  p.d = Tensor({nf, 1, 3, 3});
  p.a = Tensor({nf, nf, 3, 3});
  p.b = Tensor({nf, nf, 3, 3});
  p.b_tilde = Tensor({nf, nf, 3, 3});
  p.a_tilde = Tensor({nf, nf, 3, 3});
  p.d_tilde = Tensor({1, nf, 3, 3});
  p.theta = Tensor({nf});
  if (cfg.variant == Variant::epn) {
    p.nonlocal = NonlocalParams{Tensor({nf / 2, nf, 1, 1}), Tensor({nf / 2, nf, 1, 1}),
                                Tensor({nf, nf, 1, 1}), Tensor({nf, 2 * nf, 1, 1})};
  }
  return p;
}

struct Model {
  ModelConfig config;
  std::vector<PhaseParams> phases;
};

inline Model make_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m{cfg, {}};
  m.phases.reserve(cfg.phases);
  for (std::size_t i = 0; i < cfg.phases; ++i) m.phases.push_back(make_phase_params(cfg));
  return m;
}

inline std::size_t phase_param_count(const ModelConfig& cfg) {
  return make_phase_params(cfg).parameter_count();
}

/// Exact learnable scalar count; parameters are per-phase, never shared
/// across phases.
inline std::size_t count_params(const ModelConfig& cfg) {
  return cfg.phases * phase_param_count(cfg);
}

/// The documented serialization order of one phase's fields:
/// D, A, B, B~, A~, D~, theta, gamma, alpha, beta, [Walpha, Wbeta, Wphi, C].
template <typename Fn>
void for_each_param(PhaseParams& p, Fn&& fn) {
  auto span_of = [](Tensor& t) { return std::span<double>(t.data(), t.size()); };
  fn(span_of(p.d));
  fn(span_of(p.a));
  fn(span_of(p.b));
  fn(span_of(p.b_tilde));
  fn(span_of(p.a_tilde));
  fn(span_of(p.d_tilde));
  fn(span_of(p.theta));
  fn(std::span<double>(&p.gamma, 1));
  fn(std::span<double>(&p.alpha, 1));
  fn(std::span<double>(&p.beta, 1));
  if (p.nonlocal) {
    fn(span_of(p.nonlocal->w_alpha));
    fn(span_of(p.nonlocal->w_beta));
    fn(span_of(p.nonlocal->w_phi));
    fn(span_of(p.nonlocal->c_comb));
  }
}

inline std::vector<std::span<double>> flatten_params(Model& m) {
  std::vector<std::span<double>> out;
  for (PhaseParams& p : m.phases)
    for_each_param(p, [&](std::span<double> s) { out.push_back(s); });
  return out;
}

// ---------------------------------------------------------------------------
// Graph-side forward pass
// ---------------------------------------------------------------------------

/// One phase's parameters as graph leaves (scalars as 1-element tensors),
/// created in the documented field order.
struct PhaseVars {
  ad::Node* d;
  ad::Node* a;
  ad::Node* b;
  ad::Node* b_tilde;
  ad::Node* a_tilde;
  ad::Node* d_tilde;
  ad::Node* theta;
  ad::Node* gamma;
  ad::Node* alpha;
  ad::Node* beta;
  ad::Node* w_alpha = nullptr;
  ad::Node* w_beta = nullptr;
  ad::Node* w_phi = nullptr;
  ad::Node* c_comb = nullptr;

  bool has_nonlocal() const { return w_alpha != nullptr; }
};

inline PhaseVars make_phase_vars(ad::Tape& t, const PhaseParams& p, bool trainable) {
  PhaseVars v{};
  v.d = t.leaf(p.d, trainable);
  v.a = t.leaf(p.a, trainable);
  v.b = t.leaf(p.b, trainable);
  v.b_tilde = t.leaf(p.b_tilde, trainable);
  v.a_tilde = t.leaf(p.a_tilde, trainable);
  v.d_tilde = t.leaf(p.d_tilde, trainable);
  v.theta = t.leaf(p.theta, trainable);
  v.gamma = t.leaf(Tensor::scalar(p.gamma), trainable);
  v.alpha = t.leaf(Tensor::scalar(p.alpha), trainable);
  v.beta = t.leaf(Tensor::scalar(p.beta), trainable);
  if (p.nonlocal) {
    v.w_alpha = t.leaf(p.nonlocal->w_alpha, trainable);
    v.w_beta = t.leaf(p.nonlocal->w_beta, trainable);
    v.w_phi = t.leaf(p.nonlocal->w_phi, trainable);
    v.c_comb = t.leaf(p.nonlocal->c_comb, trainable);
  }
  return v;
}

/// Gradients of one phase's leaves, in the documented field order.
inline std::vector<Tensor> phase_grads(const PhaseVars& v) {
  std::vector<Tensor> g;
  for (ad::Node* n : {v.d, v.a, v.b, v.b_tilde, v.a_tilde, v.d_tilde, v.theta, v.gamma, v.alpha,
                      v.beta, v.w_alpha, v.w_beta, v.w_phi, v.c_comb}) {
    if (n) g.push_back(ad::Tape::grad_or_zero(n));
  }
  return g;
}

/// Measurement context as constant graph leaves.
struct MeasurementVars {
  ad::Node* phi;    // [m,n]
  ad::Node* phi_t;  // [n,m]
  ad::Node* y_col;  // [m,1]
  std::size_t h = 0, w = 0;
};

inline MeasurementVars make_measurement_vars(ad::Tape& t, const Tensor& phi, const Tensor& y,
                                             std::size_t h, std::size_t w) {
  if (phi.rank() != 2 || phi.dim(1) != h * w)
    throw std::invalid_argument("measurement: phi " + phi.shape_str() +
                                " does not match image size " + std::to_string(h) + "x" +
                                std::to_string(w));
  if (y.size() != phi.dim(0))
    throw std::invalid_argument("measurement: y length " + std::to_string(y.size()) +
                                " does not match phi rows " + std::to_string(phi.dim(0)));
  MeasurementVars mv;
  mv.phi = t.leaf(phi);
  mv.phi_t = t.leaf(solver::transpose(phi));
  mv.y_col = t.leaf(y.reshaped({y.size(), 1}));
  mv.h = h;
  mv.w = w;
  return mv;
}

/// Gradient of f(x) = |phi x - y|^2 in image form: 2 phi^T (phi x - y).
inline ad::Node* grad_f(ad::Tape& t, const MeasurementVars& mv, ad::Node* x_img) {
  const std::size_t n = mv.h * mv.w;
  ad::Node* col = t.reshape(x_img, {n, 1});
  ad::Node* r = t.sub(t.matmul(mv.phi, col), mv.y_col);
  ad::Node* g = t.mul_scalar(t.matmul(mv.phi_t, r), 2.0);
  return t.reshape(g, {1, mv.h, mv.w});
}

/// G(x) = B ReLU(A D x): feature generator D then A/B separated by a ReLU,
/// all 3x3, giving a 7x7 receptive field.
inline ad::Node* apply_g(ad::Tape& t, const PhaseVars& v, ad::Node* x) {
  return t.conv2d(t.relu(t.conv2d(t.conv2d(x, v.d), v.a)), v.b);
}

/// G~(z) = D~ A~ ReLU(B~ z), the mirrored map back to a one-channel residual.
inline ad::Node* apply_g_tilde(ad::Tape& t, const PhaseVars& v, ad::Node* z) {
  return t.conv2d(t.conv2d(t.relu(t.conv2d(z, v.b_tilde)), v.a_tilde), v.d_tilde);
}

/// Non-local operator: embedded-Gaussian attention over all spatial
/// positions followed by a learnable combination of the local and non-local
/// features. omega is row-stochastic; position i receives
/// sum_j omega_ij * phi(z_j).
inline ad::Node* apply_nonlocal(ad::Tape& t, const PhaseVars& v, ad::Node* z) {
  if (!v.has_nonlocal())
    throw std::invalid_argument("apply_nonlocal: phase has no non-local parameters");
  const Tensor& zv = z->value;
  const std::size_t nf = zv.dim(0), n = zv.dim(1) * zv.dim(2);
  if (nf % 2 != 0)
    throw std::invalid_argument("apply_nonlocal: channel count must be even, got " +
                                std::to_string(nf));
  ad::Node* za = t.reshape(t.conv2d(z, v.w_alpha), {nf / 2, n});
  ad::Node* zb = t.reshape(t.conv2d(z, v.w_beta), {nf / 2, n});
  ad::Node* omega = t.softmax_rows(t.matmul(t.transpose(za), zb));  // [n,n]
  ad::Node* zphi = t.reshape(t.conv2d(z, v.w_phi), {nf, n});
  ad::Node* nl = t.matmul(zphi, t.transpose(omega));  // [nf,n]
  ad::Node* cat = t.concat_channels(t.reshape(z, {nf, n, 1}), t.reshape(nl, {nf, n, 1}));
  return t.reshape(t.relu(t.conv2d(cat, v.c_comb)), {nf, zv.dim(1), zv.dim(2)});
}

/// Maps a gradient-step point b to the next iterate. The second argument is
/// the step size of the producing gradient step (alpha or beta); the learned
/// denoiser ignores it, a closed-form prox substitute needs it.
using DenoiseBuilder = std::function<ad::Node*(ad::Tape&, ad::Node*, double)>;

/// Learned update: b + G~(N(soft(G(b), theta))), N only for the epn variant.
inline ad::Node* learned_denoise(ad::Tape& t, const PhaseVars& v, ad::Node* b_img,
                                 bool use_nonlocal) {
  ad::Node* s = t.soft_threshold(apply_g(t, v, b_img), v.theta);
  if (use_nonlocal) s = apply_nonlocal(t, v, s);
  return t.add(b_img, apply_g_tilde(t, v, s));
}

struct PhaseState {
  ad::Node* x_prev;       // x^k
  ad::Node* x_prev_half;  // x^{k-1/2}
};

struct PhaseOutput {
  ad::Node* x_next;       // x^{k+1}
  ad::Node* x_next_half;  // x^{k+1/2}
};

/// One accelerated extra proximal gradient iteration, unrolled. Both the
/// half-step and full-step branches read the same PhaseVars.
inline PhaseOutput phase_forward(ad::Tape& t, const PhaseVars& v, PhaseState state,
                                 const MeasurementVars& mv, bool use_nonlocal,
                                 const DenoiseBuilder* substitute = nullptr) {
  auto denoise = [&](ad::Node* b_img, ad::Node* step) -> ad::Node* {
    if (substitute) return (*substitute)(t, b_img, step->value[0]);
    return learned_denoise(t, v, b_img, use_nonlocal);
  };
  ad::Node* xt = t.add(state.x_prev, t.scale(v.gamma, t.sub(state.x_prev, state.x_prev_half)));
  ad::Node* b_half = t.sub(xt, t.scale(v.alpha, grad_f(t, mv, xt)));
  ad::Node* x_half = denoise(b_half, v.alpha);
  ad::Node* x_hat = t.add(x_half, t.scale(v.gamma, t.sub(x_half, state.x_prev)));
  ad::Node* b_full = t.sub(x_hat, t.scale(v.beta, grad_f(t, mv, x_hat)));
  ad::Node* x_next = denoise(b_full, v.beta);
  return {x_next, x_half};
}

struct ModelVars {
  std::vector<PhaseVars> phases;
};

inline ModelVars make_model_vars(ad::Tape& t, const Model& m, bool trainable) {
  ModelVars v;
  v.phases.reserve(m.phases.size());
  for (const PhaseParams& p : m.phases) v.phases.push_back(make_phase_vars(t, p, trainable));
  return v;
}

inline std::vector<Tensor> collect_grads(const ModelVars& v) {
  std::vector<Tensor> g;
  for (const PhaseVars& pv : v.phases) {
    std::vector<Tensor> pg = phase_grads(pv);
    for (Tensor& t : pg) g.push_back(std::move(t));
  }
  return g;
}

/// x0 = Q0 y in image form.
inline Tensor q0_apply(const Tensor& q0, const Tensor& y, std::size_t h, std::size_t w) {
  return solver::matvec(q0, y).reshaped({1, h, w});
}

/// Cascade of S phases from x^0 = Q0 y; S = 0 returns the initialization.
inline ad::Node* model_forward(ad::Tape& t, const Model& m, const ModelVars& vars,
                               const MeasurementVars& mv, ad::Node* x0_img) {
  if (vars.phases.size() != m.phases.size())
    throw std::invalid_argument("model_forward: phase variable count mismatch");
  const bool use_nonlocal = m.config.variant == Variant::epn;
  PhaseState state{x0_img, x0_img};
  ad::Node* x = x0_img;
  for (std::size_t k = 0; k < vars.phases.size(); ++k) {
    PhaseOutput out = phase_forward(t, vars.phases[k], state, mv, use_nonlocal);
    state = {out.x_next, out.x_next_half};
    x = out.x_next;
  }
  return x;
}

}  // namespace epn::net
