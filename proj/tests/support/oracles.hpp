#pragma once

// Brute-force reference implementations used to check the production paths.
// These deliberately use the most direct formulation available (position
// loops, explicit exponentials, textbook elimination) and share no code with
// the library.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "epn/tensor.hpp"

namespace epn::test {

/// Zero-padded correlation by direct position loops (pad 1 for k=3, 0 for k=1).
inline Tensor conv_oracle(const Tensor& in, const Tensor& kr) {
  const std::size_t cout = kr.dim(0), cin = kr.dim(1), k = kr.dim(2);
  const std::size_t H = in.dim(1), W = in.dim(2);
  const std::ptrdiff_t pad = k == 3 ? 1 : 0;
  Tensor out({cout, H, W});
  for (std::size_t oc = 0; oc < cout; ++oc)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < cin; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t iy = std::ptrdiff_t(y + ky) - pad;
              const std::ptrdiff_t ix = std::ptrdiff_t(x + kx) - pad;
              if (iy < 0 || ix < 0 || iy >= std::ptrdiff_t(H) || ix >= std::ptrdiff_t(W))
                continue;
              acc += kr(oc, ic, ky, kx) * in(ic, std::size_t(iy), std::size_t(ix));
            }
        out(oc, y, x) = acc;
      }
  return out;
}

inline Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor out({m, p});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a(i, l) * b(l, j);
      out(i, j) = acc;
    }
  return out;
}

/// Solves A X = B by Gaussian elimination with partial pivoting.
inline Tensor gauss_solve(Tensor a, Tensor b) {
  const std::size_t n = a.dim(0), p = b.dim(1);
  if (a.dim(1) != n || b.dim(0) != n) throw std::invalid_argument("gauss_solve: bad shapes");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0) throw std::runtime_error("gauss_solve: singular matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(piv, c), a(col, c));
      for (std::size_t c = 0; c < p; ++c) std::swap(b(piv, c), b(col, c));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < p; ++c) b(r, c) -= f * b(col, c);
    }
  }
  Tensor x({n, p});
  for (std::size_t ri = n; ri-- > 0;) {
    for (std::size_t c = 0; c < p; ++c) {
      double acc = b(ri, c);
      for (std::size_t j = ri + 1; j < n; ++j) acc -= a(ri, j) * x(j, c);
      x(ri, c) = acc / a(ri, ri);
    }
  }
  return x;
}

/// Nested-refinement grid minimization of 1/2 |x-b|^2 + t g(x) on 2-D
/// instances; g is an arbitrary callable. The window shrinks gently (1/3 per
/// level) because the nonsmooth objective can have a shallow valley along a
/// kink line; the minimal objective value is resolved well below 1e-6.
/// Returns {x0, x1, objective}.
template <typename G>
std::array<double, 3> prox_grid_oracle_2d(double b0, double b1, double t, G&& g) {
  double c0 = b0, c1 = b1;
  double hw = 2.0 * std::max({1.0, std::fabs(b0), std::fabs(b1)});
  double best = std::numeric_limits<double>::infinity();
  const int side = 48;
  for (int level = 0; level < 28; ++level) {
    double best0 = c0, best1 = c1;
    for (int i = 0; i <= side; ++i)
      for (int j = 0; j <= side; ++j) {
        const double x0 = c0 - hw + 2.0 * hw * double(i) / side;
        const double x1 = c1 - hw + 2.0 * hw * double(j) / side;
        const double obj =
            0.5 * ((x0 - b0) * (x0 - b0) + (x1 - b1) * (x1 - b1)) + t * g(x0, x1);
        if (obj < best) {
          best = obj;
          best0 = x0;
          best1 = x1;
        }
      }
    c0 = best0;
    c1 = best1;
    hw /= 3.0;
  }
  return {c0, c1, best};
}

/// Position-by-position evaluation of the embedded-Gaussian non-local block:
/// omega_ij = exp(a_i . b_j) / sum_j exp(a_i . b_j), v_i = sum_j omega_ij
/// phi(z_j), out = ReLU(C [z; v]). The 1x1 maps are applied per position.
inline Tensor nonlocal_oracle(const Tensor& z, const Tensor& w_alpha, const Tensor& w_beta,
                              const Tensor& w_phi, const Tensor& c_comb) {
  const std::size_t nf = z.dim(0), H = z.dim(1), W = z.dim(2), n = H * W;
  const std::size_t half = w_alpha.dim(0);
  auto zvec = [&](std::size_t pos, std::size_t c) { return z[c * n + pos]; };
  auto map1x1 = [&](const Tensor& w, std::size_t rows, std::size_t pos, std::size_t r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < nf; ++c) acc += w(r, c, 0, 0) * zvec(pos, c);
    (void)rows;
    return acc;
  };
  Tensor out({nf, H, W});
  // embeddings per position
  std::vector<std::vector<double>> av(n, std::vector<double>(half));
  std::vector<std::vector<double>> bv(n, std::vector<double>(half));
  std::vector<std::vector<double>> pv(n, std::vector<double>(nf));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < half; ++r) {
      av[i][r] = map1x1(w_alpha, half, i, r);
      bv[i][r] = map1x1(w_beta, half, i, r);
    }
    for (std::size_t r = 0; r < nf; ++r) pv[i][r] = map1x1(w_phi, nf, i, r);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> w(n);
    double norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dotij = 0.0;
      for (std::size_t r = 0; r < half; ++r) dotij += av[i][r] * bv[j][r];
      w[j] = std::exp(dotij);
      norm += w[j];
    }
    std::vector<double> v(nf, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < nf; ++r) v[r] += (w[j] / norm) * pv[j][r];
    for (std::size_t r = 0; r < nf; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < nf; ++c) acc += c_comb(r, c, 0, 0) * zvec(i, c);
      for (std::size_t c = 0; c < nf; ++c) acc += c_comb(r, nf + c, 0, 0) * v[c];
      out[r * n + i] = acc > 0.0 ? acc : 0.0;
    }
  }
  return out;
}

}  // namespace epn::test
