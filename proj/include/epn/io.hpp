#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "epn/network.hpp"
#include "epn/pipeline.hpp"
#include "epn/solver.hpp"
#include "epn/tensor.hpp"

namespace epn::io {

// ---------------------------------------------------------------------------
// Container: UTF-8 header line "<kind> v1 key=value ...\n", then a little-
// endian u64 count of 64-bit reals, then the values little-endian. Used for
// checkpoints, measurement matrices, Q0 and patch data alike.
// ---------------------------------------------------------------------------

struct Container {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<double> values;
};

namespace detail {

inline void put_u64_le(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline std::uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw std::runtime_error("container: truncated length prefix");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << c.kind << " v1";
  for (const auto& [k, v] : c.meta) out << " " << k << "=" << v;
  out << "\n";
  detail::put_u64_le(out, c.values.size());
  for (double d : c.values) detail::put_u64_le(out, std::bit_cast<std::uint64_t>(d));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("container: missing header in " + path.string());
  std::istringstream hs(header);
  Container c;
  std::string version;
  hs >> c.kind >> version;
  if (version != "v1")
    throw std::runtime_error("container: unsupported version '" + version + "' in " +
                             path.string());
  std::string tok;
  while (hs >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("container: malformed header token '" + tok + "'");
    c.meta[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  const std::uint64_t count = detail::get_u64_le(in);
  c.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    try {
      c.values[i] = std::bit_cast<double>(detail::get_u64_le(in));
    } catch (const std::runtime_error&) {
      throw std::runtime_error("container: truncated values in " + path.string() + " (expected " +
                               std::to_string(count) + " reals, got " + std::to_string(i) + ")");
    }
  }
  return c;
}

inline std::string meta_get(const Container& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end())
    throw std::runtime_error("container: missing header field '" + key + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Matrices and patch datasets
// ---------------------------------------------------------------------------

inline void write_matrix(const std::filesystem::path& path, const Tensor& m,
                         std::map<std::string, std::string> extra = {}) {
  Container c;
  c.kind = "epn-matrix";
  c.meta = std::move(extra);
  c.meta["rows"] = std::to_string(m.dim(0));
  c.meta["cols"] = std::to_string(m.dim(1));
  c.values = m.values();
  write_container(path, c);
}

inline Tensor read_matrix(const std::filesystem::path& path,
                          std::map<std::string, std::string>* meta_out = nullptr) {
  Container c = read_container(path);
  if (c.kind != "epn-matrix")
    throw std::runtime_error(path.string() + ": expected epn-matrix, got " + c.kind);
  const std::size_t rows = std::stoul(meta_get(c, "rows"));
  const std::size_t cols = std::stoul(meta_get(c, "cols"));
  if (meta_out) *meta_out = c.meta;
  return Tensor({rows, cols}, std::move(c.values));
}

/// patches.bin holds the pixel data; the line-oriented manifest records the
/// provenance (source path, x offset, y offset) of every patch. The
/// train/holdout split is a deterministic function of the dataset seed and is
/// recomputed on load.
inline void save_dataset(const std::filesystem::path& dir, const cs::PatchDataset& ds) {
  Container c;
  c.kind = "epn-patches";
  c.meta["count"] = std::to_string(ds.patches.size());
  c.meta["patch"] = std::to_string(ds.patch_size);
  c.meta["seed"] = std::to_string(ds.seed);
  c.values.reserve(ds.patches.size() * ds.patch_size * ds.patch_size);
  for (const Tensor& p : ds.patches)
    c.values.insert(c.values.end(), p.values().begin(), p.values().end());
  write_container(dir / "patches.bin", c);

  std::ofstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  for (const cs::PatchRecord& r : ds.manifest)
    mf << r.source << " " << r.x << " " << r.y << "\n";
}

inline cs::PatchDataset load_dataset(const std::filesystem::path& dir) {
  Container c = read_container(dir / "patches.bin");
  if (c.kind != "epn-patches")
    throw std::runtime_error((dir / "patches.bin").string() + ": expected epn-patches, got " +
                             c.kind);
  cs::PatchDataset ds;
  ds.patch_size = std::stoul(meta_get(c, "patch"));
  ds.seed = std::stoull(meta_get(c, "seed"));
  const std::size_t count = std::stoul(meta_get(c, "count"));
  const std::size_t per = ds.patch_size * ds.patch_size;
  if (c.values.size() != count * per)
    throw std::runtime_error((dir / "patches.bin").string() + ": value count " +
                             std::to_string(c.values.size()) + " does not match " +
                             std::to_string(count) + " patches of " + std::to_string(per));
  ds.patches.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> vals(c.values.begin() + std::ptrdiff_t(i * per),
                             c.values.begin() + std::ptrdiff_t((i + 1) * per));
    ds.patches.emplace_back(std::vector<std::size_t>{1, ds.patch_size, ds.patch_size},
                            std::move(vals));
  }
  std::ifstream mf(dir / "manifest.txt");
  if (mf) {
    cs::PatchRecord r;
    while (mf >> r.source >> r.x >> r.y) ds.manifest.push_back(r);
  }
  cs::split_holdout(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_checkpoint(const std::filesystem::path& path, net::Model& model,
                            std::uint64_t seed) {
  Container c;
  c.kind = "epn-checkpoint";
  c.meta["variant"] = net::variant_name(model.config.variant);
  c.meta["S"] = std::to_string(model.config.phases);
  c.meta["Nf"] = std::to_string(model.config.nf);
  c.meta["patch"] = std::to_string(model.config.patch);
  c.meta["seed"] = std::to_string(seed);
  c.values.reserve(net::count_params(model.config));
  for (std::span<double> s : net::flatten_params(model))
    c.values.insert(c.values.end(), s.begin(), s.end());
  write_container(path, c);
}

struct LoadedCheckpoint {
  net::Model model;
  std::uint64_t seed = 0;
};

inline std::string checkpoint_fingerprint(const net::ModelConfig& cfg) {
  return std::string("variant=") + net::variant_name(cfg.variant) +
         " S=" + std::to_string(cfg.phases) + " Nf=" + std::to_string(cfg.nf) +
         " patch=" + std::to_string(cfg.patch);
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.kind != "epn-checkpoint")
    throw std::runtime_error(path.string() + ": expected epn-checkpoint, got " + c.kind);
  net::ModelConfig cfg;
  cfg.variant = net::variant_from_name(meta_get(c, "variant"));
  cfg.phases = std::stoul(meta_get(c, "S"));
  cfg.nf = std::stoul(meta_get(c, "Nf"));
  cfg.patch = std::stoul(meta_get(c, "patch"));
  const std::size_t expected = net::count_params(cfg);
  if (c.values.size() != expected)
    throw std::runtime_error(path.string() + ": parameter count " +
                             std::to_string(c.values.size()) + " does not match " +
                             checkpoint_fingerprint(cfg) + " (expected " +
                             std::to_string(expected) + ")");
  LoadedCheckpoint out{net::make_model(cfg), std::stoull(meta_get(c, "seed"))};
  std::size_t at = 0;
  for (std::span<double> s : net::flatten_params(out.model)) {
    for (double& v : s) v = c.values[at++];
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV and run metadata
// ---------------------------------------------------------------------------

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(const std::filesystem::path& path, const solver::SolverTrace& tr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,objective,time_ms\n";
  for (const auto& p : tr.points)
    out << p.iteration << "," << fmt_double(p.objective) << "," << fmt_double(p.time_ms) << "\n";
}

/// FNV-1a 64-bit over the file bytes; used for artifact checksums.
inline std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= std::uint64_t(static_cast<unsigned char>(buf[i]));
      h *= 0x100000001b3ULL;
    }
    if (in.eof()) break;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// run.meta: resolved configuration plus artifact checksums, one entry per
/// line. Contains no timestamps so identical reruns are checksum-equal.
inline void write_run_meta(const std::filesystem::path& dir, const std::string& command,
                           const std::vector<std::pair<std::string, std::string>>& config,
                           const std::vector<std::filesystem::path>& artifacts) {
  std::ofstream out(dir / "run.meta");
  if (!out) throw std::runtime_error("cannot write " + (dir / "run.meta").string());
  out << "command: " << command << "\n";
  for (const auto& [k, v] : config) out << k << ": " << v << "\n";
  for (const auto& a : artifacts)
    out << "artifact: " << a.filename().string() << " fnv64=" << hex64(fnv1a_file(a)) << "\n";
  out << "status: ok\n";
}

}  // namespace epn::io
