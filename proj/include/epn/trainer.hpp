#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "epn/autodiff.hpp"
#include "epn/io.hpp"
#include "epn/network.hpp"
#include "epn/pipeline.hpp"
#include "epn/rng.hpp"
#include "epn/solver.hpp"
#include "epn/tensor.hpp"

namespace epn::train {

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Uniform Xavier/Glorot draw on +-sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_init(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                          std::uint64_t seed) {
  if (fan_in == 0 || fan_out == 0)
    throw std::invalid_argument("xavier_init: fans must be positive");
  Rng rng(seed);
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

namespace detail {

inline void xavier_fill(Tensor& kernel, Rng& rng) {
  // conv kernels [Cout, Cin, k, k]: fan = channels * k^2
  const std::size_t k2 = kernel.dim(2) * kernel.dim(3);
  const double bound = std::sqrt(6.0 / double((kernel.dim(1) + kernel.dim(0)) * k2));
  for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = rng.uniform(-bound, bound);
}

}  // namespace detail

/// Xavier for every kernel; scalars use fixed starts: theta 0.01 per channel,
/// gamma 0, alpha = beta = 0.1 (tied at init, free to drift when trained).
inline net::Model init_model(const net::ModelConfig& cfg, std::uint64_t seed) {
  net::Model m = net::make_model(cfg);
  Rng rng(seed);
  for (net::PhaseParams& p : m.phases) {
    detail::xavier_fill(p.d, rng);
    detail::xavier_fill(p.a, rng);
    detail::xavier_fill(p.b, rng);
    detail::xavier_fill(p.b_tilde, rng);
    detail::xavier_fill(p.a_tilde, rng);
    detail::xavier_fill(p.d_tilde, rng);
    for (std::size_t c = 0; c < p.theta.size(); ++c) p.theta[c] = 0.01;
    p.gamma = 0.0;
    p.alpha = 0.1;
    p.beta = 0.1;
    if (p.nonlocal) {
      detail::xavier_fill(p.nonlocal->w_alpha, rng);
      detail::xavier_fill(p.nonlocal->w_beta, rng);
      detail::xavier_fill(p.nonlocal->w_phi, rng);
      detail::xavier_fill(p.nonlocal->c_comb, rng);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long t = 0;

  static AdamState init(const std::vector<std::span<double>>& params, AdamConfig cfg) {
    AdamState s;
    s.cfg = cfg;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

/// Standard bias-corrected Adam update, in place.
inline void adam_step(std::vector<std::span<double>>& params, const std::vector<Tensor>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient group count mismatch");
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.cfg.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(state.cfg.beta2, double(state.t));
  for (std::size_t g = 0; g < params.size(); ++g) {
    std::span<double> p = params[g];
    const Tensor& grad = grads[g];
    if (grad.size() != p.size())
      throw std::invalid_argument("adam_step: gradient size " + std::to_string(grad.size()) +
                                  " does not match parameter size " + std::to_string(p.size()) +
                                  " in group " + std::to_string(g));
    std::vector<double>& m = state.m[g];
    std::vector<double>& v = state.v[g];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.cfg.beta1 * m[i] + (1.0 - state.cfg.beta1) * grad[i];
      v[i] = state.cfg.beta2 * v[i] + (1.0 - state.cfg.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Per-sample reconstruction loss (1/N) |xhat(y) - x|^2; when grads_out is
/// set, also accumulates d loss / d params in the documented flatten order.
inline double sample_loss(const net::Model& model, const Tensor& phi, const Tensor& phi_t,
                          const Tensor& q0, const Tensor& y, const Tensor& x_true,
                          std::vector<Tensor>* grads_out = nullptr) {
  ad::Tape tape;
  net::MeasurementVars mv;
  mv.phi = tape.leaf(phi);
  mv.phi_t = tape.leaf(phi_t);
  mv.y_col = tape.leaf(y.reshaped({y.size(), 1}));
  mv.h = model.config.patch;
  mv.w = model.config.patch;
  net::ModelVars vars = net::make_model_vars(tape, model, grads_out != nullptr);
  ad::Node* x0 = tape.leaf(net::q0_apply(q0, y, mv.h, mv.w));
  ad::Node* xhat = net::model_forward(tape, model, vars, mv, x0);
  ad::Node* truth = tape.leaf(x_true);
  ad::Node* loss =
      tape.mul_scalar(tape.squared_norm(tape.sub(xhat, truth)), 1.0 / double(x_true.size()));
  if (grads_out) {
    tape.backward(loss);
    *grads_out = net::collect_grads(vars);
  }
  return loss->value[0];
}

inline Tensor reconstruct(const net::Model& model, const Tensor& phi, const Tensor& phi_t,
                          const Tensor& q0, const Tensor& y) {
  ad::Tape tape;
  net::MeasurementVars mv;
  mv.phi = tape.leaf(phi);
  mv.phi_t = tape.leaf(phi_t);
  mv.y_col = tape.leaf(y.reshaped({y.size(), 1}));
  mv.h = model.config.patch;
  mv.w = model.config.patch;
  net::ModelVars vars = net::make_model_vars(tape, model, false);
  ad::Node* x0 = tape.leaf(net::q0_apply(q0, y, mv.h, mv.w));
  return net::model_forward(tape, model, vars, mv, x0)->value;
}

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("EPN_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

namespace detail {

template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const int t = std::min<std::size_t>(std::max(threads, 1), count);
  if (t <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(t));
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w]() {
      for (std::size_t i = std::size_t(w); i < count; i += std::size_t(t)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Mean loss and mean gradients over the given samples. Samples fan out over
/// threads; the reduction sums in sample-index order so results do not depend
/// on the thread count.
inline double batch_loss_and_grads(const net::Model& model, const Tensor& phi,
                                   const Tensor& phi_t, const Tensor& q0,
                                   const std::vector<Tensor>& ys,
                                   const std::vector<Tensor>& xs,
                                   const std::vector<std::size_t>& indices, int threads,
                                   std::vector<Tensor>* grads_out) {
  if (indices.empty()) throw std::invalid_argument("batch: empty sample set");
  std::vector<double> losses(indices.size(), 0.0);
  std::vector<std::vector<Tensor>> grads(grads_out ? indices.size() : 0);
  detail::parallel_for(indices.size(), threads, [&](std::size_t i) {
    const std::size_t s = indices[i];
    losses[i] = sample_loss(model, phi, phi_t, q0, ys[s], xs[s],
                            grads_out ? &grads[i] : nullptr);
  });
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= double(indices.size());
  if (grads_out) {
    std::vector<Tensor>& acc = *grads_out;
    acc = std::move(grads[0]);
    for (std::size_t i = 1; i < grads.size(); ++i)
      for (std::size_t g = 0; g < acc.size(); ++g)
        for (std::size_t j = 0; j < acc[g].size(); ++j) acc[g][j] += grads[i][g][j];
    const double inv = 1.0 / double(indices.size());
    for (Tensor& g : acc)
      for (std::size_t j = 0; j < g.size(); ++j) g[j] *= inv;
  }
  return loss;
}

inline double eval_loss(const net::Model& model, const Tensor& phi, const Tensor& phi_t,
                        const Tensor& q0, const std::vector<Tensor>& ys,
                        const std::vector<Tensor>& xs, const std::vector<std::size_t>& indices,
                        int threads) {
  return batch_loss_and_grads(model, phi, phi_t, q0, ys, xs, indices, threads, nullptr);
}

/// Mean PSNR of the reconstructions against ground truth over the given set.
inline double mean_psnr(const net::Model& model, const Tensor& phi, const Tensor& phi_t,
                        const Tensor& q0, const std::vector<Tensor>& ys,
                        const std::vector<Tensor>& xs, const std::vector<std::size_t>& indices,
                        int threads) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> vals(indices.size());
  detail::parallel_for(indices.size(), threads, [&](std::size_t i) {
    const std::size_t s = indices[i];
    vals[i] = cs::psnr(reconstruct(model, phi, phi_t, q0, ys[s]), xs[s]);
  });
  double acc = 0.0;
  for (double v : vals) acc += v;
  return acc / double(vals.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  int threads = 0;                   // 0 -> EPN_THREADS env, then hardware
  bool fixed_timing = false;         // write 0 for wall_ms (reproducible logs)
  double plateau_factor = 0.5;
  std::size_t plateau_epochs = 5;
  double plateau_min_improve = 1e-3;  // 0.1% relative

  void validate() const {
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
    if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be >= 0");
  }
};

struct TrainResult {
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  double epoch0_loss = 0.0;
  double final_train_loss = 0.0;
  double epoch0_holdout_psnr = 0.0;
  double final_holdout_psnr = 0.0;
  double baseline_psnr = 0.0;  // PSNR of Q0 y alone on the holdout
  net::Model model;
};

/// Shuffled mini-batch training with per-epoch metric rows:
///   epoch,step,train_loss,holdout_psnr,lr,wall_ms
/// Row 0 is the freshly initialized model evaluated on the training set; rows
/// e >= 1 report the mean of that epoch's mini-batch losses. Reproducible per
/// (config, seed, dataset); aborts on a non-finite loss with the offending
/// batch recorded.
inline TrainResult train(const TrainConfig& tc, const net::ModelConfig& mc,
                         const cs::PatchDataset& ds, const Tensor& phi, const Tensor& q0,
                         const std::filesystem::path& out_dir) {
  tc.validate();
  mc.validate();
  if (ds.patches.empty()) throw std::invalid_argument("train: empty dataset");
  if (ds.patch_size != mc.patch)
    throw std::invalid_argument("train: dataset patch size " + std::to_string(ds.patch_size) +
                                " does not match model patch " + std::to_string(mc.patch));
  std::filesystem::create_directories(out_dir);

  std::vector<std::size_t> train_idx = ds.train_indices;
  std::vector<std::size_t> holdout_idx = ds.holdout_indices;
  if (train_idx.empty() && holdout_idx.empty()) {
    cs::PatchDataset tmp = ds;
    cs::split_holdout(tmp);
    train_idx = tmp.train_indices;
    holdout_idx = tmp.holdout_indices;
  }

  const int threads = resolve_threads(tc.threads);
  const Tensor phi_t = solver::transpose(phi);
  std::vector<Tensor> ys(ds.patches.size());
  detail::parallel_for(ds.patches.size(), threads, [&](std::size_t i) {
    ys[i] = solver::matvec(phi, ds.patches[i].reshaped({phi.dim(1)}));
  });

  TrainResult res;
  res.model = init_model(mc, tc.seed);
  std::vector<std::span<double>> params = net::flatten_params(res.model);
  AdamState adam = AdamState::init(params, AdamConfig{tc.lr});

  const auto start = std::chrono::steady_clock::now();
  auto wall_ms = [&]() -> long long {
    if (tc.fixed_timing) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  };

  res.metrics_path = out_dir / "metrics.csv";
  std::ofstream csv(res.metrics_path);
  if (!csv) throw std::runtime_error("cannot write " + res.metrics_path.string());
  csv << "epoch,step,train_loss,holdout_psnr,lr,wall_ms\n";
  auto log_row = [&](std::size_t epoch, std::size_t step, double loss, double hpsnr) {
    csv << epoch << "," << step << "," << io::fmt_double(loss) << "," << io::fmt_double(hpsnr)
        << "," << io::fmt_double(adam.cfg.lr) << "," << wall_ms() << "\n";
    csv.flush();
  };

  res.baseline_psnr = [&]() {
    if (holdout_idx.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (std::size_t s : holdout_idx)
      acc += cs::psnr(net::q0_apply(q0, ys[s], mc.patch, mc.patch), ds.patches[s]);
    return acc / double(holdout_idx.size());
  }();

  res.epoch0_loss = eval_loss(res.model, phi, phi_t, q0, ys, ds.patches, train_idx, threads);
  res.epoch0_holdout_psnr =
      mean_psnr(res.model, phi, phi_t, q0, ys, ds.patches, holdout_idx, threads);
  log_row(0, 0, res.epoch0_loss, res.epoch0_holdout_psnr);

  Rng shuffle_rng(tc.seed ^ 0x7e3a9c15d24b66f1ULL);
  std::size_t step = 0;
  double best_loss = res.epoch0_loss;
  std::size_t stall = 0;
  double epoch_loss = res.epoch0_loss;
  double hpsnr = res.epoch0_holdout_psnr;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0, batch = 0; at < order.size(); at += tc.batch_size, ++batch) {
      const std::size_t hi = std::min(order.size(), at + tc.batch_size);
      std::vector<std::size_t> idx(order.begin() + std::ptrdiff_t(at),
                                   order.begin() + std::ptrdiff_t(hi));
      std::vector<Tensor> grads;
      const double bloss =
          batch_loss_and_grads(res.model, phi, phi_t, q0, ys, ds.patches, idx, threads, &grads);
      if (!std::isfinite(bloss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch));
      adam_step(params, grads, adam);
      ++step;
      loss_sum += bloss * double(idx.size());
      seen += idx.size();
    }
    epoch_loss = loss_sum / double(seen);
    hpsnr = mean_psnr(res.model, phi, phi_t, q0, ys, ds.patches, holdout_idx, threads);
    log_row(epoch, step, epoch_loss, hpsnr);

    if (epoch_loss < best_loss * (1.0 - tc.plateau_min_improve)) {
      best_loss = epoch_loss;
      stall = 0;
    } else if (++stall >= tc.plateau_epochs) {
      adam.cfg.lr *= tc.plateau_factor;
      stall = 0;
    }

    if (tc.checkpoint_every != 0 && epoch % tc.checkpoint_every == 0 && epoch != tc.epochs) {
      io::save_checkpoint(out_dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".bin"),
                          res.model, tc.seed);
    }
  }

  res.final_train_loss = epoch_loss;
  res.final_holdout_psnr = hpsnr;
  res.checkpoint_path = out_dir / "checkpoint.bin";
  io::save_checkpoint(res.checkpoint_path, res.model, tc.seed);
  return res;
}

}  // namespace epn::train
