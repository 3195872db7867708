#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epn/rng.hpp"
#include "epn/tensor.hpp"

namespace epn::cs {

// ---------------------------------------------------------------------------
// Measurement matrices
// ---------------------------------------------------------------------------

struct MeasurementMatrix {
  Tensor phi;  // [m,n], rows mutually orthonormal
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t rows() const { return phi.dim(0); }
  std::size_t cols() const { return phi.dim(1); }
};

/// Row-orthogonalized Gaussian sensing matrix, m = round(ratio * n).
/// Modified Gram-Schmidt with one re-orthogonalization pass; a degenerate
/// sample (rank < m) is resampled with an incremented sub-seed.
inline MeasurementMatrix gen_measurement(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0) || ratio > 1.0)
    throw std::invalid_argument("gen_measurement: ratio must lie in (0,1], got " +
                                std::to_string(ratio));
  const std::size_t m = std::size_t(std::llround(ratio * double(n)));
  if (m < 1 || m > n)
    throw std::invalid_argument("gen_measurement: m = " + std::to_string(m) +
                                " out of range for n = " + std::to_string(n));

  constexpr int max_attempts = 10;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Rng rng(seed + std::uint64_t(attempt));
    Tensor phi({m, n});
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = rng.normal();

    bool degenerate = false;
    for (int pass = 0; pass < 2 && !degenerate; ++pass) {
      for (std::size_t i = 0; i < m; ++i) {
        double* ri = phi.data() + i * n;
        for (std::size_t j = 0; j < i; ++j) {
          const double* rj = phi.data() + j * n;
          double proj = 0.0;
          for (std::size_t k = 0; k < n; ++k) proj += ri[k] * rj[k];
          for (std::size_t k = 0; k < n; ++k) ri[k] -= proj * rj[k];
        }
        double nrm = 0.0;
        for (std::size_t k = 0; k < n; ++k) nrm += ri[k] * ri[k];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-12) {
          degenerate = true;
          break;
        }
        for (std::size_t k = 0; k < n; ++k) ri[k] /= nrm;
      }
    }
    if (!degenerate) return {std::move(phi), ratio, seed};
  }
  throw std::runtime_error("gen_measurement: degenerate Gaussian sample after " +
                           std::to_string(max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Images (PGM/PPM fixtures)
// ---------------------------------------------------------------------------

/// Pixel values in [0,1]; channel-interleaved rows for channels == 3.
struct Image {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<double> pixels;

  double at(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

namespace detail {
inline int next_pnm_int(std::istream& in) {
  // skips whitespace and '#' comments
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw std::runtime_error("pnm: unexpected end of header");
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;
}
}  // namespace detail

/// Binary PGM (P5) or PPM (P6), 8-bit.
inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || (m1 != '5' && m1 != '6'))
    throw std::runtime_error("unsupported image format in " + path + " (want binary PGM/PPM)");
  const std::size_t channels = m1 == '5' ? 1 : 3;
  Image img;
  img.channels = channels;
  img.width = std::size_t(detail::next_pnm_int(in));
  img.height = std::size_t(detail::next_pnm_int(in));
  const int maxval = detail::next_pnm_int(in);
  if (maxval <= 0 || maxval > 255)
    throw std::runtime_error("pnm: unsupported maxval " + std::to_string(maxval) + " in " + path);
  const std::size_t count = img.width * img.height * channels;
  std::vector<unsigned char> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(count));
  if (std::size_t(in.gcount()) != count) throw std::runtime_error("pnm: truncated pixel data in " + path);
  img.pixels.resize(count);
  for (std::size_t i = 0; i < count; ++i) img.pixels[i] = double(raw[i]) / double(maxval);
  return img;
}

inline void write_pgm(const std::string& path, const Image& img) {
  if (img.channels != 1) throw std::invalid_argument("write_pgm: image must be grayscale");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pixels) {
    const double c = std::clamp(v, 0.0, 1.0);
    out.put(char(static_cast<unsigned char>(std::lround(c * 255.0))));
  }
  if (!out) throw std::runtime_error("short write: " + path);
}

/// ITU-R BT.601 luminance weights.
inline Image to_luminance(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3) throw std::invalid_argument("to_luminance: expected 1 or 3 channels");
  Image out;
  out.width = img.width;
  out.height = img.height;
  out.channels = 1;
  out.pixels.resize(img.width * img.height);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double* p = img.pixels.data() + 3 * i;
    out.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch datasets
// ---------------------------------------------------------------------------

struct PatchRecord {
  std::string source;
  std::size_t x = 0, y = 0;
};

struct PatchDataset {
  std::size_t patch_size = 33;
  std::uint64_t seed = 0;
  std::vector<Tensor> patches;  // each [1, patch, patch]
  std::vector<PatchRecord> manifest;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> holdout_indices;
};

/// Random 33x33 luminance crops in [0,1]. Images smaller than the patch are
/// skipped with a warning; the (image, offset) picks are uniform per draw.
inline PatchDataset extract_patches(const std::vector<std::pair<std::string, Image>>& images,
                                    std::size_t count, std::uint64_t seed,
                                    std::size_t patch = 33,
                                    std::ostream* warnings = &std::cerr) {
  PatchDataset ds;
  ds.patch_size = patch;
  ds.seed = seed;
  std::vector<std::pair<std::string, Image>> usable;
  for (const auto& [name, img] : images) {
    Image gray = to_luminance(img);
    if (gray.width < patch || gray.height < patch) {
      if (warnings)
        *warnings << "extract_patches: skipping " << name << " (" << gray.width << "x"
                  << gray.height << " smaller than " << patch << "x" << patch << ")\n";
      continue;
    }
    usable.emplace_back(name, std::move(gray));
  }
  if (count == 0) return ds;
  if (usable.empty()) throw std::invalid_argument("extract_patches: no usable images");

  Rng rng(seed);
  ds.patches.reserve(count);
  ds.manifest.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    const auto& [name, img] = usable[std::size_t(rng.below(usable.size()))];
    const std::size_t x0 = std::size_t(rng.below(img.width - patch + 1));
    const std::size_t y0 = std::size_t(rng.below(img.height - patch + 1));
    Tensor t({1, patch, patch});
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x) t(0, y, x) = img.at(x0 + x, y0 + y);
    ds.patches.push_back(std::move(t));
    ds.manifest.push_back({name, x0, y0});
  }
  return ds;
}

/// Seeded shuffle split; the holdout takes the trailing 10% of the shuffle.
/// Recorded with the dataset so the Q0 fit and the trainer see the same split.
inline void split_holdout(PatchDataset& ds, double fraction = 0.1) {
  const std::size_t count = ds.patches.size();
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(ds.seed ^ 0x9d2c56801f2d3c4bULL);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t holdout = std::size_t(double(count) * fraction);
  ds.train_indices.assign(order.begin(), order.end() - std::ptrdiff_t(holdout));
  ds.holdout_indices.assign(order.end() - std::ptrdiff_t(holdout), order.end());
}

// ---------------------------------------------------------------------------
// Least-squares initializer
// ---------------------------------------------------------------------------

struct Initializer {
  Tensor q0;  // [n,m]
};

/// Minimizer of |Q Y - X|_F over Q, i.e. X Y^T (Y Y^T)^{-1}, computed through
/// an LDLT factorization of Y Y^T rather than an explicit inverse.
inline Initializer fit_q0(const Tensor& x_cols, const Tensor& y_cols) {
  if (x_cols.rank() != 2 || y_cols.rank() != 2 || x_cols.dim(1) != y_cols.dim(1))
    throw std::invalid_argument("fit_q0: X " + x_cols.shape_str() + " and Y " +
                                y_cols.shape_str() + " must share the sample dimension");
  const std::size_t n = x_cols.dim(0), m = y_cols.dim(0), P = y_cols.dim(1);
  if (P < m)
    throw std::invalid_argument("fit_q0: need at least m = " + std::to_string(m) +
                                " samples, got " + std::to_string(P));

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> X(x_cols.data(), Eigen::Index(n), Eigen::Index(P));
  Eigen::Map<const Mat> Y(y_cols.data(), Eigen::Index(m), Eigen::Index(P));

  Mat gram = Y * Y.transpose();
  Eigen::LDLT<Mat> ldlt(gram);
  const auto& d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  const double dmin = d.cwiseAbs().minCoeff();
  if (ldlt.info() != Eigen::Success || dmin <= 0.0 || dmax / dmin > 1e14) {
    throw std::invalid_argument(
        "fit_q0: Y Y^T is singular or near-singular (condition estimate " +
        std::to_string(dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity()) + ")");
  }
  // Q0 = X Y^T G^{-1}; solve G Q0^T = Y X^T since G is symmetric.
  Mat q0t = ldlt.solve(Y * X.transpose());
  Initializer init{Tensor({n, m})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      init.q0(i, j) = q0t(Eigen::Index(j), Eigen::Index(i));
  return init;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Peak signal-to-noise ratio in dB; +inf when the images are identical.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  if (!a.same_shape(b))
    throw std::invalid_argument("psnr: shape " + a.shape_str() + " does not match " +
                                b.shape_str());
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace epn::cs
