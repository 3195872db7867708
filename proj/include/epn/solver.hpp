#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epn/rng.hpp"
#include "epn/tensor.hpp"

namespace epn::solver {

// ---------------------------------------------------------------------------
// Small dense kernels on rank-1/rank-2 tensors.
// ---------------------------------------------------------------------------

inline Tensor matvec(const Tensor& a, const Tensor& x) {
  if (a.rank() != 2 || x.rank() != 1 || a.dim(1) != x.dim(0))
    throw std::invalid_argument("matvec: incompatible shapes " + a.shape_str() + " and " +
                                x.shape_str());
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    const double* row = a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = a(i, j);
  return out;
}

inline Tensor vsub(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Tensor vadd(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor vscale(double c, const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = c * a[i];
  return out;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const Tensor& a) { return std::sqrt(dot(a, a)); }

inline double norm1(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i]);
  return acc;
}

inline Tensor soft_threshold_vec(const Tensor& v, double t) {
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    out[i] = x > t ? x - t : (x < -t ? x + t : 0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Problem description
// ---------------------------------------------------------------------------

/// Prox-capable regularizer g. Supported kinds are the L1 norm of x itself
/// and the L1 norm of Wx for an orthonormal W, both with closed-form prox.
struct Regularizer {
  enum class Kind { l1_identity, l1_orthonormal };

  Kind kind = Kind::l1_identity;
  Tensor w;   // [n,n], used when kind == l1_orthonormal
  Tensor wt;  // cached transpose

  static Regularizer l1() { return Regularizer{}; }

  static Regularizer l1_transformed(Tensor w_in, double ortho_tol = 1e-10) {
    if (w_in.rank() != 2 || w_in.dim(0) != w_in.dim(1))
      throw std::invalid_argument("Regularizer: W must be square, got " + w_in.shape_str());
    Regularizer r;
    r.kind = Kind::l1_orthonormal;
    r.w = std::move(w_in);
    r.wt = transpose(r.w);
    const std::size_t n = r.w.dim(0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += r.w(i, k) * r.w(j, k);
        if (std::fabs(acc - (i == j ? 1.0 : 0.0)) > ortho_tol)
          throw std::invalid_argument("Regularizer: W rows are not orthonormal (entry " +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
      }
    return r;
  }

  double value(const Tensor& x) const {
    return kind == Kind::l1_identity ? norm1(x) : norm1(matvec(w, x));
  }

  /// argmin_x 1/2 |x-b|^2 + t g(x)
  Tensor prox(const Tensor& b, double t) const {
    if (!(t > 0.0))
      throw std::invalid_argument("prox: scale must be positive, got " + std::to_string(t));
    if (kind == Kind::l1_identity) return soft_threshold_vec(b, t);
    return matvec(wt, soft_threshold_vec(matvec(w, b), t));
  }
};

/// min_x f(x) + lambda * g(x) with smooth f given by value and gradient.
struct CompositeProblem {
  std::function<double(const Tensor&)> f_value;
  std::function<Tensor(const Tensor&)> f_grad;
  Regularizer g;
  double lambda = 0.0;

  double objective(const Tensor& x) const {
    return f_value(x) + (lambda != 0.0 ? lambda * g.value(x) : 0.0);
  }

  /// Prox step with scale t = step * lambda; identity when lambda == 0.
  Tensor prox_step(const Tensor& b, double step) const {
    const double t = step * lambda;
    return t > 0.0 ? g.prox(b, t) : b;
  }
};

// ---------------------------------------------------------------------------
// Traces and options
// ---------------------------------------------------------------------------

struct TracePoint {
  std::size_t iteration;
  double objective;
  double time_ms;
};

enum class StopReason { max_iters, tolerance };

struct SolverTrace {
  std::vector<TracePoint> points;
  StopReason stop_reason = StopReason::max_iters;
  Tensor solution;
  std::vector<Tensor> iterates;       // full iterates incl. x0, when requested
  std::vector<Tensor> iterates_half;  // predictor iterates, when the scheme has them

  double final_objective() const { return points.back().objective; }
  double best_objective() const {
    double best = points.front().objective;
    for (const auto& p : points) best = std::min(best, p.objective);
    return best;
  }
};

struct SolveOptions {
  std::size_t max_iters = 10000;
  double rel_obj_tol = 1e-10;
  bool keep_iterates = false;
  std::function<double()> clock_ms;  // empty -> time_ms column is 0
};

namespace detail {

class TraceBuilder {
 public:
  explicit TraceBuilder(const SolveOptions& opts) : opts_(opts) {}

  void record(SolverTrace& tr, std::size_t iter, double objective, const Tensor& x) const {
    tr.points.push_back({iter, objective, opts_.clock_ms ? opts_.clock_ms() : 0.0});
    if (opts_.keep_iterates) tr.iterates.push_back(x);
  }

  bool converged(double prev, double cur) const {
    const double scale = std::fabs(prev);
    if (scale == 0.0) return cur == prev;
    return std::fabs(cur - prev) < opts_.rel_obj_tol * scale;
  }

 private:
  const SolveOptions& opts_;
};

inline void require_positive(double v, const char* what) {
  if (!(v > 0.0))
    throw std::invalid_argument(std::string(what) + " must be positive, got " + std::to_string(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

/// Proximal gradient (ISTA): x <- prox_{a*lambda}(x - a grad f(x)).
inline SolverTrace ista(const CompositeProblem& p, Tensor x0, double step,
                        const SolveOptions& opts = {}) {
  detail::require_positive(step, "ista: step");
  detail::TraceBuilder tb(opts);
  SolverTrace tr;
  Tensor x = std::move(x0);
  double obj = p.objective(x);
  tb.record(tr, 0, obj, x);
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    Tensor b = vsub(x, vscale(step, p.f_grad(x)));
    x = p.prox_step(b, step);
    const double prev = obj;
    obj = p.objective(x);
    tb.record(tr, k, obj, x);
    if (tb.converged(prev, obj)) {
      tr.stop_reason = StopReason::tolerance;
      break;
    }
  }
  tr.solution = std::move(x);
  return tr;
}

/// Nesterov-accelerated proximal gradient (FISTA form): extrapolate by
/// gamma_k = (k-1)/(k+2) before the prox-gradient step.
inline SolverTrace nesterov_accel(const CompositeProblem& p, Tensor x0, double step,
                                  const SolveOptions& opts = {}) {
  detail::require_positive(step, "nesterov_accel: step");
  detail::TraceBuilder tb(opts);
  SolverTrace tr;
  Tensor x = std::move(x0);
  Tensor x_prev = x;
  double obj = p.objective(x);
  tb.record(tr, 0, obj, x);
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    const double gamma = double(k - 1) / double(k + 2);
    Tensor xt = vadd(x, vscale(gamma, vsub(x, x_prev)));
    Tensor b = vsub(xt, vscale(step, p.f_grad(xt)));
    x_prev = x;
    x = p.prox_step(b, step);
    const double prev = obj;
    obj = p.objective(x);
    tb.record(tr, k, obj, x);
    if (tb.converged(prev, obj)) {
      tr.stop_reason = StopReason::tolerance;
      break;
    }
  }
  tr.solution = std::move(x);
  return tr;
}

/// Extra proximal gradient: a predictor prox-gradient step to x^{k+1/2},
/// then a corrector prox-gradient step taken from the predictor point with
/// the gradient evaluated there. Identical to the accelerated scheme below
/// with zero momentum.
inline SolverTrace extra_proximal_gradient(const CompositeProblem& p, Tensor x0, double alpha,
                                           double beta, const SolveOptions& opts = {}) {
  detail::require_positive(alpha, "extra_proximal_gradient: alpha");
  detail::require_positive(beta, "extra_proximal_gradient: beta");
  detail::TraceBuilder tb(opts);
  SolverTrace tr;
  Tensor x = std::move(x0);
  double obj = p.objective(x);
  tb.record(tr, 0, obj, x);
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    Tensor b_half = vsub(x, vscale(alpha, p.f_grad(x)));
    Tensor x_half = p.prox_step(b_half, alpha);
    if (opts.keep_iterates) tr.iterates_half.push_back(x_half);
    Tensor b_full = vsub(x_half, vscale(beta, p.f_grad(x_half)));
    x = p.prox_step(b_full, beta);
    const double prev = obj;
    obj = p.objective(x);
    tb.record(tr, k, obj, x);
    if (tb.converged(prev, obj)) {
      tr.stop_reason = StopReason::tolerance;
      break;
    }
  }
  tr.solution = std::move(x);
  return tr;
}

using MomentumSchedule = std::function<double(std::size_t)>;

/// Standard Nesterov momentum sequence, zero at the first iteration.
inline double nesterov_momentum(std::size_t k) { return double(k - 1) / double(k + 2); }

/// Accelerated extra proximal gradient, the six-line scheme: extrapolate
/// against the previous half iterate, prox-gradient to x^{k+1/2},
/// extrapolate against the previous full iterate, prox-gradient to x^{k+1}.
/// The first half iterate is seeded with x0 so the initial extrapolations
/// vanish together with the zero initial momentum.
inline SolverTrace accelerated_extra_proximal_gradient(const CompositeProblem& p, Tensor x0,
                                                       double alpha, double beta,
                                                       MomentumSchedule gamma = {},
                                                       const SolveOptions& opts = {},
                                                       const Tensor* x_half0 = nullptr) {
  detail::require_positive(alpha, "accelerated_extra_proximal_gradient: alpha");
  detail::require_positive(beta, "accelerated_extra_proximal_gradient: beta");
  if (!gamma) gamma = nesterov_momentum;
  detail::TraceBuilder tb(opts);
  SolverTrace tr;
  Tensor x = std::move(x0);
  Tensor x_half = x_half0 ? *x_half0 : x;
  double obj = p.objective(x);
  tb.record(tr, 0, obj, x);
  for (std::size_t k = 1; k <= opts.max_iters; ++k) {
    const double g = gamma(k);
    Tensor xt = vadd(x, vscale(g, vsub(x, x_half)));
    Tensor b_half = vsub(xt, vscale(alpha, p.f_grad(xt)));
    x_half = p.prox_step(b_half, alpha);
    if (opts.keep_iterates) tr.iterates_half.push_back(x_half);
    Tensor x_hat = vadd(x_half, vscale(g, vsub(x_half, x)));
    Tensor b_full = vsub(x_hat, vscale(beta, p.f_grad(x_hat)));
    x = p.prox_step(b_full, beta);
    const double prev = obj;
    obj = p.objective(x);
    tb.record(tr, k, obj, x);
    if (tb.converged(prev, obj)) {
      tr.stop_reason = StopReason::tolerance;
      break;
    }
  }
  tr.solution = std::move(x);
  return tr;
}

// ---------------------------------------------------------------------------
// Lasso instances for tests and the CLI
// ---------------------------------------------------------------------------

struct LassoInstance {
  Tensor a;  // [m,n], entries N(0,1)/sqrt(n)
  Tensor y;  // [m]
  double lambda;
};

inline LassoInstance make_lasso(std::size_t m, std::size_t n, double lambda, std::uint64_t seed) {
  Rng rng(seed);
  Tensor a({m, n});
  const double s = 1.0 / std::sqrt(double(n));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = s * rng.normal();
  Tensor y({m});
  for (std::size_t i = 0; i < m; ++i) y[i] = rng.normal();
  return {std::move(a), std::move(y), lambda};
}

/// f(x) = 1/2 |Ax - y|^2 with g = |x|_1 weighted by lambda.
inline CompositeProblem lasso_problem(const LassoInstance& inst) {
  CompositeProblem p;
  const Tensor at = transpose(inst.a);
  p.f_value = [a = inst.a, y = inst.y](const Tensor& x) {
    Tensor r = vsub(matvec(a, x), y);
    return 0.5 * dot(r, r);
  };
  p.f_grad = [a = inst.a, at, y = inst.y](const Tensor& x) {
    return matvec(at, vsub(matvec(a, x), y));
  };
  p.g = Regularizer::l1();
  p.lambda = inst.lambda;
  return p;
}

/// Largest eigenvalue of A^T A (= sigma_max(A)^2) by power iteration.
inline double lipschitz_bound(const Tensor& a, std::size_t iters = 100, double tol = 1e-10,
                              std::uint64_t seed = 12345) {
  const Tensor at = transpose(a);
  Rng rng(seed);
  Tensor v({a.dim(1)});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.normal();
  double lam = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    Tensor w = matvec(at, matvec(a, v));
    const double nw = norm2(w);
    if (nw == 0.0) return 0.0;
    v = vscale(1.0 / nw, w);
    const double next = dot(v, matvec(at, matvec(a, v)));
    if (std::fabs(next - lam) < tol * std::max(1.0, std::fabs(lam))) return next;
    lam = next;
  }
  return lam;
}

}  // namespace epn::solver
