// epn: command-line front end for the compressive-sensing toolkit.
//
// Subcommands: gen, train, eval, solve-lasso, count-params. Every
// artifact-producing run writes a run.meta capturing the resolved
// configuration and FNV-64 checksums of the outputs.
//
// Exit statuses: 0 success; 2 usage or validation failure (bad flags,
// missing output directory, config/checkpoint mismatch); 3 runtime or I/O
// failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epn/io.hpp"
#include "epn/network.hpp"
#include "epn/pipeline.hpp"
#include "epn/solver.hpp"
#include "epn/trainer.hpp"

namespace fs = std::filesystem;
using epn::Tensor;

namespace {

using ConfigLines = std::vector<std::pair<std::string, std::string>>;

void require_out_dir(const std::string& out) {
  if (!fs::is_directory(out))
    throw std::invalid_argument("output directory does not exist: " + out);
}

std::string fmt(double v) { return epn::io::fmt_double(v); }

// ---------------------------------------------------------------------------

struct GenOpts {
  std::size_t n = 1089;
  double ratio = 0.25;
  std::uint64_t seed = 1;
  std::string images = "data/fixtures";
  std::size_t patches = 500;
  std::string out;
};

int run_gen(const GenOpts& o) {
  require_out_dir(o.out);
  const auto patch = std::size_t(std::llround(std::sqrt(double(o.n))));
  if (patch * patch != o.n)
    throw std::invalid_argument("--n must be a perfect square (patch area), got " +
                                std::to_string(o.n));

  epn::cs::MeasurementMatrix mm = epn::cs::gen_measurement(o.n, o.ratio, o.seed);

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.images)) {
    const std::string ext = e.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no .pgm/.ppm images in " + o.images);
  std::vector<std::pair<std::string, epn::cs::Image>> images;
  for (const auto& f : files) images.emplace_back(f.string(), epn::cs::read_pnm(f.string()));

  epn::cs::PatchDataset ds = epn::cs::extract_patches(images, o.patches, o.seed, patch);
  epn::cs::split_holdout(ds);

  // Q0 is fit on the training split only and reused at evaluation time.
  const std::size_t pt = ds.train_indices.size();
  if (pt < mm.rows())
    throw std::invalid_argument("need at least " + std::to_string(mm.rows()) +
                                " training patches to fit Q0, got " + std::to_string(pt));
  Tensor x_cols({o.n, pt});
  for (std::size_t c = 0; c < pt; ++c) {
    const Tensor& p = ds.patches[ds.train_indices[c]];
    for (std::size_t r = 0; r < o.n; ++r) x_cols(r, c) = p[r];
  }
  Tensor phi_x({mm.rows(), pt});
  for (std::size_t c = 0; c < pt; ++c) {
    Tensor y = epn::solver::matvec(mm.phi, ds.patches[ds.train_indices[c]].reshaped({o.n}));
    for (std::size_t r = 0; r < mm.rows(); ++r) phi_x(r, c) = y[r];
  }
  epn::cs::Initializer init = epn::cs::fit_q0(x_cols, phi_x);

  const fs::path out(o.out);
  epn::io::write_matrix(out / "phi.bin", mm.phi,
                        {{"ratio", fmt(o.ratio)}, {"seed", std::to_string(o.seed)}});
  epn::io::write_matrix(out / "q0.bin", init.q0, {{"seed", std::to_string(o.seed)}});
  epn::io::save_dataset(out, ds);

  ConfigLines cfg = {{"flag.n", std::to_string(o.n)},
                     {"flag.ratio", fmt(o.ratio)},
                     {"flag.seed", std::to_string(o.seed)},
                     {"flag.images", o.images},
                     {"flag.patches", std::to_string(o.patches)},
                     {"derived.m", std::to_string(mm.rows())},
                     {"derived.patch", std::to_string(patch)},
                     {"derived.train", std::to_string(ds.train_indices.size())},
                     {"derived.holdout", std::to_string(ds.holdout_indices.size())}};
  epn::io::write_run_meta(out, "gen", cfg,
                          {out / "phi.bin", out / "q0.bin", out / "patches.bin",
                           out / "manifest.txt"});
  std::cout << "phi: " << mm.rows() << "x" << mm.cols() << ", patches: " << ds.patches.size()
            << " (" << ds.train_indices.size() << " train / " << ds.holdout_indices.size()
            << " holdout)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  std::string variant = "ep";
  std::size_t phases = 3;
  std::size_t nf = 32;
  double ratio = -1.0;  // optional: validated against the dataset's phi
  std::size_t epochs = 50;
  std::uint64_t seed = 1;
  std::string data;
  std::string out;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::size_t checkpoint_every = 0;
  int threads = 0;
  bool fixed_timing = false;
};

int run_train(const TrainOpts& o) {
  require_out_dir(o.out);
  const fs::path data(o.data);
  std::map<std::string, std::string> phi_meta;
  Tensor phi = epn::io::read_matrix(data / "phi.bin", &phi_meta);
  if (o.ratio >= 0.0) {
    const double have = std::stod(phi_meta.at("ratio"));
    if (std::fabs(have - o.ratio) > 1e-12)
      throw std::invalid_argument("--ratio " + fmt(o.ratio) +
                                  " does not match the dataset's measurement ratio " + fmt(have));
  }
  Tensor q0 = epn::io::read_matrix(data / "q0.bin");
  epn::cs::PatchDataset ds = epn::io::load_dataset(data);

  epn::net::ModelConfig mc;
  mc.variant = epn::net::variant_from_name(o.variant);
  mc.phases = o.phases;
  mc.nf = o.nf;
  mc.patch = ds.patch_size;
  mc.validate();
  std::cout << "parameters: " << epn::net::count_params(mc) << "\n";

  const fs::path out(o.out);
  ConfigLines cfg = {{"flag.variant", o.variant},
                     {"flag.phases", std::to_string(o.phases)},
                     {"flag.nf", std::to_string(o.nf)},
                     {"flag.epochs", std::to_string(o.epochs)},
                     {"flag.seed", std::to_string(o.seed)},
                     {"flag.lr", fmt(o.lr)},
                     {"flag.batch", std::to_string(o.batch)},
                     {"flag.data", o.data},
                     {"parameters", std::to_string(epn::net::count_params(mc))}};

  if (o.epochs == 0) {
    epn::net::Model model = epn::train::init_model(mc, o.seed);
    epn::io::save_checkpoint(out / "checkpoint.bin", model, o.seed);
    epn::io::write_run_meta(out, "train", cfg, {out / "checkpoint.bin"});
    std::cout << "wrote initialized checkpoint (no training requested)\n";
    return 0;
  }

  epn::train::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.checkpoint_every = o.checkpoint_every;
  tc.threads = o.threads;
  tc.fixed_timing = o.fixed_timing;

  epn::train::TrainResult res = epn::train::train(tc, mc, ds, phi, q0, out);
  cfg.emplace_back("result.epoch0_loss", fmt(res.epoch0_loss));
  cfg.emplace_back("result.final_train_loss", fmt(res.final_train_loss));
  cfg.emplace_back("result.baseline_psnr", fmt(res.baseline_psnr));
  cfg.emplace_back("result.final_holdout_psnr", fmt(res.final_holdout_psnr));
  epn::io::write_run_meta(out, "train", cfg, {res.checkpoint_path, res.metrics_path});
  std::cout << "train loss " << fmt(res.epoch0_loss) << " -> " << fmt(res.final_train_loss)
            << "\nholdout psnr " << fmt(res.final_holdout_psnr) << " dB (Q0 baseline "
            << fmt(res.baseline_psnr) << " dB)\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string split = "holdout";
  int threads = 0;
};

int run_eval(const EvalOpts& o) {
  require_out_dir(o.out);
  epn::io::LoadedCheckpoint lc = epn::io::load_checkpoint(o.ckpt);
  const fs::path data(o.data);
  Tensor phi = epn::io::read_matrix(data / "phi.bin");
  Tensor q0 = epn::io::read_matrix(data / "q0.bin");
  epn::cs::PatchDataset ds = epn::io::load_dataset(data);

  const std::string data_fp = "patch=" + std::to_string(ds.patch_size) +
                              " n=" + std::to_string(phi.dim(1)) +
                              " m=" + std::to_string(phi.dim(0));
  if (lc.model.config.patch != ds.patch_size ||
      lc.model.config.patch * lc.model.config.patch != phi.dim(1)) {
    throw std::invalid_argument("checkpoint does not match dataset: checkpoint {" +
                                epn::io::checkpoint_fingerprint(lc.model.config) + "} vs data {" +
                                data_fp + "}");
  }

  std::vector<std::size_t> idx;
  if (o.split == "holdout")
    idx = ds.holdout_indices;
  else if (o.split == "train")
    idx = ds.train_indices;
  else if (o.split == "all")
    for (std::size_t i = 0; i < ds.patches.size(); ++i) idx.push_back(i);
  else
    throw std::invalid_argument("--split must be holdout, train or all, got " + o.split);
  if (idx.empty()) throw std::invalid_argument("selected split is empty");

  const Tensor phi_t = epn::solver::transpose(phi);
  const fs::path out(o.out);
  std::ofstream csv(out / "psnr.csv");
  csv << "item,source,psnr\n";
  std::vector<fs::path> artifacts;
  double acc = 0.0;
  const int threads = epn::train::resolve_threads(o.threads);
  std::vector<Tensor> recon(idx.size());
  epn::train::detail::parallel_for(idx.size(), threads, [&](std::size_t i) {
    Tensor y = epn::solver::matvec(phi, ds.patches[idx[i]].reshaped({phi.dim(1)}));
    recon[i] = epn::train::reconstruct(lc.model, phi, phi_t, q0, y);
  });
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double p = epn::cs::psnr(recon[i], ds.patches[idx[i]]);
    acc += p;
    const std::string source =
        idx[i] < ds.manifest.size() ? ds.manifest[idx[i]].source : std::string("-");
    csv << idx[i] << "," << source << "," << fmt(p) << "\n";
    char name[32];
    std::snprintf(name, sizeof(name), "recon_%04zu.pgm", idx[i]);
    epn::cs::Image img;
    img.width = img.height = ds.patch_size;
    img.pixels = recon[i].values();
    epn::cs::write_pgm((out / name).string(), img);
    artifacts.push_back(out / name);
  }
  const double mean = acc / double(idx.size());
  csv << "mean,," << fmt(mean) << "\n";
  csv.close();
  artifacts.insert(artifacts.begin(), out / "psnr.csv");

  ConfigLines cfg = {{"flag.ckpt", o.ckpt},
                     {"flag.data", o.data},
                     {"flag.split", o.split},
                     {"checkpoint", epn::io::checkpoint_fingerprint(lc.model.config)},
                     {"result.mean_psnr", fmt(mean)}};
  epn::io::write_run_meta(out, "eval", cfg, artifacts);
  std::cout << "mean psnr (" << o.split << ", " << idx.size() << " items): " << fmt(mean)
            << " dB\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct LassoOpts {
  std::size_t m = 20;
  std::size_t n = 50;
  double lambda = 0.1;
  std::string algo = "ista";
  std::uint64_t seed = 1;
  std::size_t iters = 20000;
  std::string out;
  bool fixed_timing = false;
};

int run_solve_lasso(const LassoOpts& o) {
  require_out_dir(o.out);
  epn::solver::LassoInstance inst = epn::solver::make_lasso(o.m, o.n, o.lambda, o.seed);
  epn::solver::CompositeProblem prob = epn::solver::lasso_problem(inst);
  const double L = epn::solver::lipschitz_bound(inst.a);
  const double step = 1.0 / L;
  Tensor x0({o.n});

  epn::solver::SolveOptions opts;
  opts.max_iters = o.iters;
  const auto start = std::chrono::steady_clock::now();
  if (!o.fixed_timing) {
    opts.clock_ms = [start]() {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
    };
  }

  epn::solver::SolverTrace tr;
  if (o.algo == "ista")
    tr = epn::solver::ista(prob, x0, step, opts);
  else if (o.algo == "fista")
    tr = epn::solver::nesterov_accel(prob, x0, step, opts);
  else if (o.algo == "epg")
    tr = epn::solver::extra_proximal_gradient(prob, x0, step, step, opts);
  else if (o.algo == "aepg")
    tr = epn::solver::accelerated_extra_proximal_gradient(prob, x0, step, step, {}, opts);
  else
    throw std::invalid_argument("--algo must be one of ista|fista|epg|aepg, got " + o.algo);

  const fs::path out(o.out);
  epn::io::write_trace_csv(out / "trace.csv", tr);
  epn::io::write_matrix(out / "solution.bin", tr.solution.reshaped({1, o.n}),
                        {{"seed", std::to_string(o.seed)}, {"algo", o.algo}});
  ConfigLines cfg = {{"flag.m", std::to_string(o.m)},
                     {"flag.n", std::to_string(o.n)},
                     {"flag.lambda", fmt(o.lambda)},
                     {"flag.algo", o.algo},
                     {"flag.seed", std::to_string(o.seed)},
                     {"flag.iters", std::to_string(o.iters)},
                     {"derived.step", fmt(step)},
                     {"result.iterations", std::to_string(tr.points.back().iteration)},
                     {"result.objective", fmt(tr.final_objective())}};
  epn::io::write_run_meta(out, "solve-lasso", cfg, {out / "trace.csv", out / "solution.bin"});
  std::cout << "final objective " << fmt(tr.final_objective()) << " after "
            << tr.points.back().iteration << " iterations\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct CountOpts {
  std::string variant = "ep";
  std::size_t phases = 1;
  std::size_t nf = 32;
};

int run_count_params(const CountOpts& o) {
  epn::net::ModelConfig mc;
  mc.variant = epn::net::variant_from_name(o.variant);
  mc.phases = o.phases;
  mc.nf = o.nf;
  mc.validate();
  std::cout << epn::net::count_params(mc) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EPN compressive-sensing toolkit"};
  app.require_subcommand(1);
  app.set_config("--config");

  GenOpts g;
  CLI::App* gen = app.add_subcommand("gen", "generate measurement matrix, patches and Q0");
  gen->add_option("--n", g.n, "signal dimension (patch area, must be a perfect square)");
  gen->add_option("--ratio", g.ratio, "CS ratio m/n in (0,1]");
  gen->add_option("--seed", g.seed, "random seed");
  gen->add_option("--images", g.images, "directory of .pgm/.ppm source images");
  gen->add_option("--patches", g.patches, "number of patches to extract");
  gen->add_option("--out", g.out, "output directory (must exist)")->required();

  TrainOpts t;
  CLI::App* train = app.add_subcommand("train", "train an EP/EPN model");
  train->add_option("--variant", t.variant, "ep or epn");
  train->add_option("--phases", t.phases, "number of unrolled phases S");
  train->add_option("--nf", t.nf, "channel count Nf");
  train->add_option("--ratio", t.ratio, "expected CS ratio (validated against the data)");
  train->add_option("--epochs", t.epochs, "training epochs (0 = emit initialized checkpoint)");
  train->add_option("--seed", t.seed, "random seed");
  train->add_option("--lr", t.lr, "Adam learning rate");
  train->add_option("--batch", t.batch, "mini-batch size");
  train->add_option("--checkpoint-every", t.checkpoint_every, "checkpoint cadence in epochs");
  train->add_option("--threads", t.threads, "worker threads (0 = EPN_THREADS env or hardware)");
  train->add_flag("--fixed-timing", t.fixed_timing, "write 0 for wall_ms (reproducible logs)");
  train->add_option("--data", t.data, "dataset directory from 'gen'")->required();
  train->add_option("--out", t.out, "output directory (must exist)")->required();

  EvalOpts e;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", e.ckpt, "checkpoint file")->required();
  eval->add_option("--data", e.data, "dataset directory from 'gen'")->required();
  eval->add_option("--out", e.out, "output directory (must exist)")->required();
  eval->add_option("--split", e.split, "holdout, train or all");
  eval->add_option("--threads", e.threads, "worker threads");

  LassoOpts l;
  CLI::App* lasso = app.add_subcommand("solve-lasso", "run a classical solver on a random Lasso");
  lasso->add_option("--m", l.m, "rows of the design matrix");
  lasso->add_option("--n", l.n, "columns of the design matrix");
  lasso->add_option("--lambda", l.lambda, "L1 weight");
  lasso->add_option("--algo", l.algo, "ista, fista, epg or aepg");
  lasso->add_option("--seed", l.seed, "random seed");
  lasso->add_option("--iters", l.iters, "iteration cap");
  lasso->add_flag("--fixed-timing", l.fixed_timing, "write 0 for time_ms (reproducible logs)");
  lasso->add_option("--out", l.out, "output directory (must exist)")->required();

  CountOpts c;
  CLI::App* count = app.add_subcommand("count-params", "print the learnable parameter count");
  count->add_option("--variant", c.variant, "ep or epn");
  count->add_option("--phases", c.phases, "number of phases S");
  count->add_option("--nf", c.nf, "channel count Nf");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_gen(g);
    if (train->parsed()) return run_train(t);
    if (eval->parsed()) return run_eval(e);
    if (lasso->parsed()) return run_solve_lasso(l);
    if (count->parsed()) return run_count_params(c);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  }
  return 2;
}
