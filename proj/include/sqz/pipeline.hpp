#pragma once

// Experiment orchestration: kernel -> decomposition -> homodyne -> covariance
// -> report, with on-disk caches so later stages can run on their own, plus
// ingestion of trace directories through the same covariance analysis.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/config.hpp"
#include "sqz/covariance.hpp"
#include "sqz/crystal_optics.hpp"
#include "sqz/homodyne.hpp"
#include "sqz/mode_decomposition.hpp"
#include "sqz/pump_kernel.hpp"

namespace sqz {

namespace fs = std::filesystem;

enum class Stage { kernel = 0, modes = 1, homodyne = 2, covariance = 3, report = 4 };

inline Stage parse_stage(const std::string& name) {
  if (name == "kernel") return Stage::kernel;
  if (name == "modes") return Stage::modes;
  if (name == "homodyne") return Stage::homodyne;
  if (name == "covariance") return Stage::covariance;
  if (name == "report") return Stage::report;
  throw ConfigError("unknown stage '" + name +
                    "' (expected kernel, modes, homodyne, covariance or report)");
}

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kernel: return "kernel";
    case Stage::modes: return "modes";
    case Stage::homodyne: return "homodyne";
    case Stage::covariance: return "covariance";
    case Stage::report: return "report";
  }
  return "?";
}

/// Exclusive lock on an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".sqzsim.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr)
      throw IoError("output directory " + dir.string() + " is locked (" + path_.string() + ")");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

/// Crystal with theta0 either configured or solved for perfect matching at
/// the configured non-collinear angle.
inline CrystalSpec resolve_crystal(const ExperimentConfig& cfg) {
  CrystalSpec crystal = cfg.crystal;
  if (cfg.solve_theta0)
    crystal.theta0_rad =
        solve_phase_matching_angle(crystal, crystal.noncollinear_angle_rad, cfg.omega_signal());
  crystal.validate(true);
  return crystal;
}

/// Gain g such that the quadrature-aligned `mode` reaches `target_db`.
/// Brackets by doubling from g Lambda_0 = 0.01, then bisects.
inline double calibrate_gain(const SqueezingDecomposition& d, const AnalysisMode& mode,
                             double target_db, Mapping mapping, double efficiency) {
  if (!(target_db < 0.0)) throw ConfigError("calibration target must be negative dB");
  if (d.size() == 0 || !(d.lambdas(0) > 0.0))
    throw NumericalError("cannot calibrate against a vanishing kernel");
  const Eigen::VectorXcd c = overlaps(mode, d);
  const double norm2 = mode.vector.squaredNorm();
  auto v_x = [&](double g) {
    const double theta = squeezed_quadrature_rotation(c, d.lambdas, g, mapping);
    const Eigen::VectorXcd rotated = c * std::polar(1.0, theta);
    return variances_from_overlaps(rotated, norm2, d.lambdas, g, mapping, efficiency, mode.label)
        .v_x;
  };
  const double target = from_db(target_db);
  double lo = 0.0;
  double hi = 0.01 / d.lambdas(0);
  int doublings = 0;
  while (v_x(hi) > target) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 200)
      throw NumericalError("calibration target " + std::to_string(target_db) +
                           " dB is unreachable for mode " + mode.label);
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (v_x(mid) > target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline std::string file_label(const std::string& label) {
  std::string s = label;
  for (char& ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '+' || ch == '-' || ch == '_'))
      ch = '_';
  return s;
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

namespace detail {

inline constexpr char kModesMagic[8] = {'S', 'Q', 'Z', 'M', 'O', 'D', 'E', '1'};

struct CachedDecomposition {
  SqueezingDecomposition d;
  double probe_residual = 0.0;
  Eigen::Index full_size = 0;
};

inline void write_decomposition(const fs::path& path, const CachedDecomposition& c,
                                const std::string& tag) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kModesMagic, sizeof(kModesMagic));
  write_pod<std::uint64_t>(out, tag.size());
  out.write(tag.data(), static_cast<std::streamsize>(tag.size()));
  write_pod<std::uint64_t>(out, c.d.grid.q.size());
  write_pod<std::uint64_t>(out, c.d.grid.omega.size());
  for (double v : c.d.grid.q) write_pod(out, v);
  for (double v : c.d.grid.omega) write_pod(out, v);
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(c.d.size()));
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(c.full_size));
  write_pod(out, c.probe_residual);
  write_pod(out, c.d.discarded_weight);
  for (Eigen::Index k = 0; k < c.d.size(); ++k) write_pod(out, c.d.lambdas(k));
  out.write(reinterpret_cast<const char*>(c.d.modes.data()),
            static_cast<std::streamsize>(c.d.modes.size() * sizeof(cplx)));
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::optional<CachedDecomposition> read_decomposition(const fs::path& path,
                                                             const std::string& tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kModesMagic)) return std::nullopt;
  const auto tag_len = read_pod<std::uint64_t>(in);
  if (tag_len > 4096) return std::nullopt;
  std::string stored(tag_len, '\0');
  in.read(stored.data(), static_cast<std::streamsize>(tag_len));
  if (stored != tag) return std::nullopt;
  CachedDecomposition c;
  const auto nq = read_pod<std::uint64_t>(in);
  const auto nw = read_pod<std::uint64_t>(in);
  if (nq * nw > (1u << 16)) throw IoError(path.string() + ": corrupt header");
  c.d.grid.q.resize(nq);
  c.d.grid.omega.resize(nw);
  for (auto& v : c.d.grid.q) v = read_pod<double>(in);
  for (auto& v : c.d.grid.omega) v = read_pod<double>(in);
  const auto k = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in));
  c.full_size = static_cast<Eigen::Index>(read_pod<std::uint64_t>(in));
  c.probe_residual = read_pod<double>(in);
  c.d.discarded_weight = read_pod<double>(in);
  c.d.lambdas.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) c.d.lambdas(i) = read_pod<double>(in);
  c.d.modes.resize(static_cast<Eigen::Index>(nq * nw), k);
  in.read(reinterpret_cast<char*>(c.d.modes.data()),
          static_cast<std::streamsize>(c.d.modes.size() * sizeof(cplx)));
  if (!in) throw IoError(path.string() + ": decomposition data truncated");
  return c;
}

inline json stats_json(const ExtremaStats& s) {
  return {{"mean_min", s.mean_min}, {"se_min", s.se_min}, {"mean_max", s.mean_max},
          {"se_max", s.se_max},     {"mean_x", s.mean_x}, {"se_x", s.se_x},
          {"mean_p", s.mean_p},     {"se_p", s.se_p},     {"periods", s.periods}};
}

inline double se_db(double mean, double se) { return 10.0 / std::log(10.0) * se / mean; }

inline std::ofstream open_csv(const fs::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << header << '\n';
  return out;
}

}  // namespace detail

/// One measured analysis mode of the homodyne stage.
struct ModeResult {
  AnalysisMode mode;  // quadrature-aligned
  QuadratureVariances variances;
  ExtremaStats trace_stats;
};

struct CovarianceGroup {
  std::string name;
  CovarianceBlocks blocks;
  BlockEigenanalysis analysis;
  MultimodeVerdict verdict;
  double oracle_max_deviation = 0.0;  // max |simulated - analytic| over entries
};

/// Trace manifest: for every covariance group, its basis labels, the file of
/// each basis mode and of each pairwise sum mode (paths relative to the
/// manifest's directory).
struct TraceManifest {
  struct Group {
    std::string name;
    std::vector<std::string> basis;
    std::vector<std::string> mode_files;
    struct Pair {
      std::size_t i = 0;
      std::size_t j = 0;
      std::string file;
    };
    std::vector<Pair> pairs;
  };
  std::vector<Group> groups;

  json to_json() const {
    json j;
    j["format"] = "sqz-trace-manifest v1";
    j["groups"] = json::array();
    for (const auto& g : groups) {
      json gj;
      gj["name"] = g.name;
      gj["basis"] = g.basis;
      gj["mode_files"] = g.mode_files;
      gj["pairs"] = json::array();
      for (const auto& p : g.pairs) gj["pairs"].push_back({{"i", p.i}, {"j", p.j}, {"file", p.file}});
      j["groups"].push_back(gj);
    }
    return j;
  }

  static TraceManifest from_json(const json& j) {
    TraceManifest m;
    try {
      if (j.at("format") != "sqz-trace-manifest v1")
        throw InputError("unsupported trace manifest format");
      for (const auto& gj : j.at("groups")) {
        Group g;
        g.name = gj.at("name").get<std::string>();
        g.basis = gj.at("basis").get<std::vector<std::string>>();
        g.mode_files = gj.at("mode_files").get<std::vector<std::string>>();
        if (g.basis.size() != g.mode_files.size())
          throw InputError("manifest group " + g.name + ": basis and mode_files differ in length");
        for (const auto& pj : gj.at("pairs"))
          g.pairs.push_back({pj.at("i").get<std::size_t>(), pj.at("j").get<std::size_t>(),
                             pj.at("file").get<std::string>()});
        m.groups.push_back(std::move(g));
      }
    } catch (const json::exception& e) {
      throw InputError(std::string("malformed trace manifest: ") + e.what());
    }
    return m;
  }
};

struct IngestedGroup {
  std::string name;
  CovarianceBlocks blocks;
};

/// Reads every trace named by the manifest, extracts the phase-referenced X
/// and P variances and assembles the blocks. Missing files are listed
/// together in one error.
inline std::vector<IngestedGroup> ingest_traces(const fs::path& directory,
                                                const TraceManifest& manifest) {
  std::vector<std::string> missing;
  for (const auto& g : manifest.groups) {
    for (const auto& f : g.mode_files)
      if (!fs::exists(directory / f)) missing.push_back(f);
    for (const auto& p : g.pairs)
      if (!fs::exists(directory / p.file)) missing.push_back(p.file);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw IoError("trace directory " + directory.string() + " lacks manifest entries: " + list);
  }
  auto measure = [&](const std::string& file, const std::string& label) {
    HomodyneTrace trace = read_trace_csv(directory / file);
    const ExtremaStats s = extract_extrema(trace);
    ModeMeasurement m;
    m.label = label;
    m.v_x = {s.mean_x, s.se_x};
    m.v_p = {s.mean_p, s.se_p};
    return m;
  };
  std::vector<IngestedGroup> out;
  for (const auto& g : manifest.groups) {
    std::vector<ModeMeasurement> diag;
    for (std::size_t i = 0; i < g.basis.size(); ++i) diag.push_back(measure(g.mode_files[i], g.basis[i]));
    std::vector<PairMeasurement> pairs;
    for (const auto& p : g.pairs) {
      if (p.i >= g.basis.size() || p.j >= g.basis.size())
        throw InputError("manifest group " + g.name + ": pair index out of range");
      pairs.push_back({p.i, p.j, measure(p.file, g.basis[p.i] + "+" + g.basis[p.j])});
    }
    out.push_back({g.name, covariance_from_measurements(diag, pairs, Provenance::ingested)});
  }
  return out;
}

inline void write_covariance_group(const fs::path& dir, const std::string& name,
                                   const CovarianceBlocks& b, const BlockEigenanalysis& a,
                                   const MultimodeVerdict& v) {
  fs::create_directories(dir);
  write_matrix_csv(dir / (name + "_vx.csv"), b.labels, b.v_x);
  write_matrix_csv(dir / (name + "_vp.csv"), b.labels, b.v_p);
  write_matrix_csv(dir / (name + "_sigma_x.csv"), b.labels, b.sigma_x);
  write_matrix_csv(dir / (name + "_sigma_p.csv"), b.labels, b.sigma_p);
  write_json_file(dir / (name + "_summary.json"), covariance_summary(b, a, v));
}

/// One run of the pipeline into an output directory.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, fs::path out_dir, std::ostream* log = &std::cerr)
      : cfg_(std::move(cfg)), out_(std::move(out_dir)), log_(log) {}

  /// Runs every stage up to and including `last`.
  void run(Stage last) {
    OutputLock lock(out_);
    for (int s = 0; s <= static_cast<int>(last); ++s) {
      stage_ = static_cast<Stage>(s);
      note(std::string("stage ") + stage_name(stage_));
      switch (stage_) {
        case Stage::kernel: run_kernel(); break;
        case Stage::modes: run_modes(); break;
        case Stage::homodyne: run_homodyne(); break;
        case Stage::covariance: run_covariance(); break;
        case Stage::report: run_report(); break;
      }
    }
  }

  Stage current_stage() const { return stage_; }
  const SqueezingDecomposition& decomposition() const { return decomposition_; }
  const std::vector<ModeResult>& temporal() const { return temporal_; }
  const std::vector<std::array<ModeResult, 2>>& spatial() const { return spatial_; }
  const std::vector<CovarianceGroup>& groups() const { return groups_; }
  double gain() const { return decomposition_.gain; }
  const json& report() const { return report_; }

 private:
  void note(const std::string& msg) const {
    if (log_ != nullptr) *log_ << "sqzsim: " << msg << '\n';
  }

  fs::path cache_dir() const { return out_ / "cache"; }

  void run_kernel() {
    crystal_ = resolve_crystal(cfg_);
    dispersion_.emplace(*crystal_, cfg_.omega_signal());
    grid_ = make_grid(cfg_.grid, cfg_.pump, *dispersion_);
    hash_ = kernel_hash(cfg_);
    const fs::path cache = cache_dir() / ("kernel_" + hash_ + ".bin");
    bool loaded = false;
    if (cfg_.output.kernel_cache && fs::exists(cache)) {
      std::string tag;
      GainKernel k = read_kernel(cache.string(), &tag);
      if (tag == hash_ && k.grid == grid_) {
        kernel_ = std::move(k);
        loaded = true;
        note("kernel loaded from cache");
      }
    }
    if (!loaded) {
      kernel_ = build_kernel(grid_, cfg_.pump, *dispersion_);
      if (cfg_.output.kernel_cache) {
        fs::create_directories(cache_dir());
        write_kernel(cache.string(), *kernel_, hash_);
      }
    }
    fs::create_directories(out_ / "kernel");
    json info;
    info["format"] = "sqz-kernel-info v1";
    info["kernel_hash"] = hash_;
    info["theta0_rad"] = crystal_->theta0_rad;
    info["theta0_deg"] = crystal_->theta0_rad * 180.0 / std::numbers::pi;
    info["lobe_q_rad_per_m"] = dispersion_->signal_lobe_q();
    info["q_points"] = grid_.q.size();
    info["omega_points"] = grid_.omega.size();
    info["q_step_rad_per_m"] = grid_.q_step();
    info["omega_step_rad_per_s"] = grid_.omega_step();
    info["is_real"] = kernel_->is_real();
    info["frobenius_norm"] = kernel_->matrix.norm();
    write_json_file(out_ / "kernel" / "kernel_info.json", info);
  }

  void run_modes() {
    char trunc[32];
    std::snprintf(trunc, sizeof(trunc), "%.6e", cfg_.analysis.truncation);
    const std::string tag = hash_ + "/" + trunc;
    const fs::path cache = cache_dir() / ("modes_" + hash_ + ".bin");
    std::optional<detail::CachedDecomposition> cached;
    if (cfg_.output.kernel_cache) cached = detail::read_decomposition(cache, tag);
    if (cached && cached->d.grid == grid_) {
      note("decomposition loaded from cache");
    } else {
      detail::CachedDecomposition fresh;
      SqueezingDecomposition full = takagi(*kernel_);
      fresh.probe_residual = takagi_probe_residual(kernel_->matrix, full.modes, full.lambdas);
      fresh.full_size = full.size();
      fresh.d = truncate(full, cfg_.analysis.truncation);
      if (cfg_.output.kernel_cache) {
        fs::create_directories(cache_dir());
        detail::write_decomposition(cache, fresh, tag);
      }
      cached = std::move(fresh);
    }
    kernel_.reset();
    if (cached->probe_residual > 1e-10)
      throw NumericalError("Takagi reconstruction residual " +
                           std::to_string(cached->probe_residual) + " exceeds 1e-10");
    decomposition_ = std::move(cached->d);
    probe_residual_ = cached->probe_residual;
    full_size_ = cached->full_size;
    decomposition_.gain = 0.0;

    const fs::path dir = out_ / "modes";
    fs::create_directories(dir);
    auto csv = detail::open_csv(dir / "eigenvalues.csv", "k,lambda,lambda_over_lambda0");
    for (Eigen::Index k = 0; k < decomposition_.size(); ++k)
      csv << k << ',' << decomposition_.lambdas(k) << ','
          << decomposition_.lambdas(k) / decomposition_.lambdas(0) << '\n';
    export_modes(dir, decomposition_, cfg_.output.exported_modes);
    json info;
    info["format"] = "sqz-modes-info v1";
    info["retained"] = decomposition_.size();
    info["full_size"] = full_size_;
    info["discarded_weight"] = decomposition_.discarded_weight;
    info["modes_above_0.1_lambda0"] = count_modes_above(decomposition_.lambdas, 0.1);
    info["takagi_probe_residual"] = probe_residual_;
    write_json_file(dir / "modes_info.json", info);
  }

  AnalysisMode hg(int order, const Eigen::VectorXd& profile) const {
    return hermite_gauss_spectral(order, cfg_.analysis.hg_center_m, cfg_.analysis.hg_fwhm_m,
                                  grid_, cfg_.omega_signal(), profile);
  }

  void resolve_gain() {
    const auto& a = cfg_.analysis;
    if (a.gain) {
      decomposition_.gain = *a.gain;
      gain_source_ = "configured";
      return;
    }
    const AnalysisMode hg0 = hg(0, full_beam_profile(decomposition_));
    decomposition_.gain = calibrate_gain(decomposition_, hg0, *a.calibration_target_db, a.mapping,
                                         a.efficiency);
    gain_source_ = "calibrated";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "calibrated g = %.6e (g lambda0 = %.4f)", decomposition_.gain,
                  decomposition_.squeezing_parameter(0));
    note(buf);
  }

  ModeResult measure_single(const AnalysisMode& raw, std::uint64_t stream) {
    ModeResult r;
    r.mode = align_to_squeezed_quadrature(raw, decomposition_, cfg_.analysis.mapping);
    r.variances = mode_variances(r.mode, decomposition_, cfg_.analysis.mapping,
                                 cfg_.analysis.efficiency);
    if (r.variances.v_x > 1.0 + 1e-12 || r.variances.v_p < 1.0 - 1e-12)
      throw NumericalError("mode " + r.mode.label + " violates V_X <= 1 <= V_P");
    HomodyneTrace trace = synthesize_trace(r.variances, cfg_.scan, cfg_.noise,
                                           derive_seed(cfg_.seed, stream), r.mode.label);
    r.trace_stats = extract_extrema(trace);
    write_trace_csv(out_ / "traces" / "single" / (file_label(r.mode.label) + ".csv"), trace);
    return r;
  }

  void run_homodyne() {
    resolve_gain();
    fs::create_directories(out_ / "traces" / "single");
    const Eigen::VectorXd profile = full_beam_profile(decomposition_);
    const double lobe_q = dispersion_->signal_lobe_q();
    temporal_.clear();
    spatial_.clear();
    std::uint64_t stream = 100;
    for (int order : cfg_.analysis.hg_orders) {
      const AnalysisMode base = hg(order, profile);
      temporal_.push_back(measure_single(base, stream++));
      if (cfg_.analysis.spatial_cuts) {
        ModeResult left = measure_single(half_cut_spatial(CutSide::left, base, grid_, lobe_q), stream++);
        ModeResult right = measure_single(half_cut_spatial(CutSide::right, base, grid_, lobe_q), stream++);
        spatial_.push_back({std::move(left), std::move(right)});
      }
    }
  }

  void run_group(const std::string& name, const std::vector<AnalysisMode>& basis,
                 std::uint64_t index, TraceManifest& manifest) {
    const auto& a = cfg_.analysis;
    SimulatedCovariance sim = simulate_covariance(basis, decomposition_, a.mapping, a.efficiency,
                                                  cfg_.scan, cfg_.noise,
                                                  derive_seed(cfg_.seed, 1000 + index));
    CovarianceGroup g;
    g.name = name;
    g.blocks = sim.blocks;
    const CovarianceBlocks oracle = analytic_blocks(basis, decomposition_, a.mapping, a.efficiency);
    g.oracle_max_deviation = std::max((g.blocks.v_x - oracle.v_x).cwiseAbs().maxCoeff(),
                                      (g.blocks.v_p - oracle.v_p).cwiseAbs().maxCoeff());
    if (cfg_.noise.noiseless && g.oracle_max_deviation > 1e-6)
      throw NumericalError("group " + name + ": simulated blocks deviate from the analytic "
                           "projection by " + std::to_string(g.oracle_max_deviation));
    g.analysis = diagonalize_blocks(g.blocks, a.bootstrap_rounds, derive_seed(cfg_.seed, 2000 + index));
    g.verdict = multimode_verdict(g.analysis, a.verdict_sigmas);

    const fs::path tdir = out_ / "traces" / name;
    fs::create_directories(tdir);
    TraceManifest::Group mg;
    mg.name = name;
    for (std::size_t i = 0; i < basis.size(); ++i) {
      const std::string file = name + "/" + file_label(basis[i].label) + ".csv";
      write_trace_csv(out_ / "traces" / file, sim.traces[i]);
      mg.basis.push_back(basis[i].label);
      mg.mode_files.push_back(file);
    }
    for (std::size_t p = 0; p < sim.pairs.size(); ++p) {
      const auto& pair = sim.pairs[p];
      const std::string file = name + "/" + file_label(sim.pairs[p].m.label) + ".csv";
      write_trace_csv(out_ / "traces" / file, sim.traces[basis.size() + p]);
      mg.pairs.push_back({pair.i, pair.j, file});
    }
    manifest.groups.push_back(std::move(mg));
    write_covariance_group(out_ / "covariance", name, g.blocks, g.analysis, g.verdict);
    groups_.push_back(std::move(g));
  }

  void run_covariance() {
    groups_.clear();
    TraceManifest manifest;
    std::vector<AnalysisMode> temporal_basis;
    for (const auto& r : temporal_) temporal_basis.push_back(r.mode);
    run_group("temporal", orthonormalize(temporal_basis), 0, manifest);
    for (std::size_t i = 0; i < spatial_.size(); ++i)
      run_group("spatial_" + temporal_[i].mode.label,
                orthonormalize({spatial_[i][0].mode, spatial_[i][1].mode}), i + 1, manifest);
    write_json_file(out_ / "traces" / "manifest.json", manifest.to_json());
  }

  json mode_json(const ModeResult& r) const {
    return {{"mode", r.mode.label},
            {"v_x", r.variances.v_x},
            {"v_p", r.variances.v_p},
            {"squeezing_db", r.variances.squeezing_db},
            {"antisqueezing_db", r.variances.antisqueezing_db},
            {"power_fraction", r.mode.parent_power},
            {"trace", detail::stats_json(r.trace_stats)}};
  }

  void run_report() {
    const auto& d = decomposition_;
    json rep;
    rep["format"] = "sqz-report v1";
    rep["kernel_hash"] = hash_;
    rep["config_hash"] = hex64(stable_hash(cfg_.document.dump()));
    rep["seed"] = cfg_.seed;
    rep["crystal"] = {{"name", crystal_->name},
                      {"theta0_rad", crystal_->theta0_rad},
                      {"theta0_deg", crystal_->theta0_rad * 180.0 / std::numbers::pi},
                      {"lobe_q_rad_per_m", dispersion_->signal_lobe_q()}};
    rep["grid"] = {{"q_points", grid_.q.size()}, {"omega_points", grid_.omega.size()},
                   {"size", grid_.size()}};
    json top = json::array();
    for (Eigen::Index k = 0; k < std::min<Eigen::Index>(10, d.size()); ++k)
      top.push_back(d.lambdas(k) / d.lambdas(0));
    rep["decomposition"] = {{"lambda0", d.lambdas(0)},
                            {"lambda_over_lambda0_top10", top},
                            {"modes_above_0.1_lambda0", count_modes_above(d.lambdas, 0.1)},
                            {"retained", d.size()},
                            {"discarded_weight", d.discarded_weight},
                            {"takagi_probe_residual", probe_residual_}};
    rep["gain"] = {{"g", d.gain}, {"g_lambda0", d.gain * d.lambdas(0)}, {"source", gain_source_}};
    if (cfg_.analysis.calibration_target_db)
      rep["gain"]["calibration_target_db"] = *cfg_.analysis.calibration_target_db;
    rep["mapping"] = cfg_.analysis.mapping == Mapping::exponential ? "exponential" : "linearized";
    rep["efficiency"] = cfg_.analysis.efficiency;
    rep["noise"] = {{"effective_samples", cfg_.noise.effective_samples},
                    {"noiseless", cfg_.noise.noiseless}};

    json temporal = json::array();
    for (const auto& r : temporal_) temporal.push_back(mode_json(r));
    rep["temporal"] = temporal;
    json spatial = json::array();
    for (std::size_t i = 0; i < spatial_.size(); ++i)
      spatial.push_back({{"temporal_mode", temporal_[i].mode.label},
                         {"full", mode_json(temporal_[i])},
                         {"left", mode_json(spatial_[i][0])},
                         {"right", mode_json(spatial_[i][1])}});
    rep["spatial"] = spatial;
    json cov = json::object();
    bool multimode = false;
    for (const auto& g : groups_) {
      cov[g.name] = {{"x_eigenvalues", vector_json(g.analysis.x.values)},
                     {"x_eigenvalue_sigma", vector_json(g.analysis.x.value_sigma)},
                     {"p_eigenvalues", vector_json(g.analysis.p.values)},
                     {"p_eigenvalue_sigma", vector_json(g.analysis.p.value_sigma)},
                     {"x_eigenvectors", matrix_json(g.analysis.x.vectors)},
                     {"count_x", g.verdict.count_x},
                     {"count_p", g.verdict.count_p},
                     {"multimode", g.verdict.multimode},
                     {"oracle_max_deviation", g.oracle_max_deviation}};
      multimode = multimode || g.verdict.multimode;
    }
    rep["covariance"] = cov;
    rep["multimode"] = multimode;
    report_ = rep;
    write_json_file(out_ / "report.json", rep);
    write_plots();
    write_manifest();
  }

  void write_plots() const {
    const fs::path dir = out_ / "plots";
    fs::create_directories(dir);
    {
      auto out = detail::open_csv(dir / "eigenvalue_spectrum.csv", "k,lambda_over_lambda0,g_lambda");
      const auto& d = decomposition_;
      for (Eigen::Index k = 0; k < d.size(); ++k)
        out << k << ',' << d.lambdas(k) / d.lambdas(0) << ',' << d.squeezing_parameter(k) << '\n';
    }
    auto row = [](std::ofstream& out, const ModeResult& r) {
      const auto& s = r.trace_stats;
      out << r.variances.squeezing_db << ',' << r.variances.antisqueezing_db << ','
          << to_db(s.mean_min) << ',' << detail::se_db(s.mean_min, s.se_min) << ','
          << to_db(s.mean_max) << ',' << detail::se_db(s.mean_max, s.se_max) << '\n';
    };
    {
      auto out = detail::open_csv(dir / "fig2_temporal_squeezing.csv",
                                  "mode,squeezing_db,antisqueezing_db,trace_min_db,trace_min_se_db,"
                                  "trace_max_db,trace_max_se_db");
      for (const auto& r : temporal_) {
        out << r.mode.label << ',';
        row(out, r);
      }
    }
    {
      auto out = detail::open_csv(dir / "fig3_spatial_squeezing.csv",
                                  "temporal_mode,region,squeezing_db,antisqueezing_db,trace_min_db,"
                                  "trace_min_se_db,trace_max_db,trace_max_se_db");
      for (std::size_t i = 0; i < spatial_.size(); ++i) {
        const std::string t = temporal_[i].mode.label;
        out << t << ",full,";
        row(out, temporal_[i]);
        out << t << ",left,";
        row(out, spatial_[i][0]);
        out << t << ",right,";
        row(out, spatial_[i][1]);
      }
    }
    auto blocks = [](std::ofstream& out, const std::string& prefix, const CovarianceBlocks& b) {
      const auto m = static_cast<Eigen::Index>(b.size());
      for (int blk = 0; blk < 2; ++blk) {
        const Eigen::MatrixXd& v = blk == 0 ? b.v_x : b.v_p;
        const Eigen::MatrixXd& s = blk == 0 ? b.sigma_x : b.sigma_p;
        for (Eigen::Index i = 0; i < m; ++i)
          for (Eigen::Index j = 0; j < m; ++j)
            out << prefix << (blk == 0 ? "X" : "P") << ',' << b.labels[i] << ',' << b.labels[j]
                << ',' << v(i, j) - (i == j ? 1.0 : 0.0) << ',' << s(i, j) << '\n';
      }
    };
    auto eigen = [](std::ofstream& out, const std::string& prefix, const BlockEigenanalysis& a) {
      for (Eigen::Index k = 0; k < a.x.values.size(); ++k)
        out << prefix << k << ',' << a.x.values(k) << ',' << a.x.value_sigma(k) << ','
            << a.p.values(k) << ',' << a.p.value_sigma(k) << '\n';
    };
    {
      auto out = detail::open_csv(dir / "fig4_temporal_blocks.csv",
                                  "block,row,col,value_minus_identity,sigma");
      auto eig = detail::open_csv(dir / "fig4_temporal_eigen.csv",
                                  "k,x_eigenvalue,x_sigma,p_eigenvalue,p_sigma");
      for (const auto& g : groups_)
        if (g.name == "temporal") {
          blocks(out, "", g.blocks);
          eigen(eig, "", g.analysis);
        }
    }
    {
      auto out = detail::open_csv(dir / "fig5_spatial_blocks.csv",
                                  "temporal_mode,block,row,col,value_minus_identity,sigma");
      auto eig = detail::open_csv(dir / "fig5_spatial_eigen.csv",
                                  "temporal_mode,k,x_eigenvalue,x_sigma,p_eigenvalue,p_sigma");
      for (const auto& g : groups_)
        if (g.name != "temporal") {
          const std::string t = g.name.substr(std::string("spatial_").size());
          blocks(out, t + ",", g.blocks);
          eigen(eig, t + ",", g.analysis);
        }
    }
  }

  /// Sorted listing of every artifact in the bundle (caches excluded).
  void write_manifest() const {
    std::set<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(out_)) {
      if (!e.is_regular_file()) continue;
      const std::string rel = fs::relative(e.path(), out_).generic_string();
      if (rel.rfind("cache/", 0) == 0 || rel == ".sqzsim.lock" || rel == "manifest.json") continue;
      files.insert(rel);
    }
    json m;
    m["format"] = "sqz-bundle v1";
    m["files"] = files;
    write_json_file(out_ / "manifest.json", m);
  }

  ExperimentConfig cfg_;
  fs::path out_;
  std::ostream* log_;
  Stage stage_ = Stage::kernel;

  std::optional<CrystalSpec> crystal_;
  std::optional<PdcDispersion> dispersion_;
  SpatioSpectralGrid grid_;
  std::string hash_;
  std::optional<GainKernel> kernel_;
  SqueezingDecomposition decomposition_;
  double probe_residual_ = 0.0;
  Eigen::Index full_size_ = 0;
  std::string gain_source_ = "configured";
  std::vector<ModeResult> temporal_;
  std::vector<std::array<ModeResult, 2>> spatial_;
  std::vector<CovarianceGroup> groups_;
  json report_;
};

/// Ingests a trace directory (with its manifest.json) and writes the
/// covariance analysis of each group under `out_dir`/ingested.
inline std::vector<CovarianceGroup> run_ingest(const ExperimentConfig& cfg,
                                               const fs::path& trace_dir, const fs::path& out_dir) {
  OutputLock lock(out_dir);
  const TraceManifest manifest = TraceManifest::from_json(read_json_file(trace_dir / "manifest.json"));
  const auto ingested = ingest_traces(trace_dir, manifest);
  std::vector<CovarianceGroup> groups;
  json summary = json::object();
  for (std::size_t i = 0; i < ingested.size(); ++i) {
    CovarianceGroup g;
    g.name = ingested[i].name;
    g.blocks = ingested[i].blocks;
    g.analysis = diagonalize_blocks(g.blocks, cfg.analysis.bootstrap_rounds,
                                    derive_seed(cfg.seed, 2000 + i));
    g.verdict = multimode_verdict(g.analysis, cfg.analysis.verdict_sigmas);
    write_covariance_group(out_dir / "ingested", g.name, g.blocks, g.analysis, g.verdict);
    summary[g.name] = {{"x_eigenvalues", vector_json(g.analysis.x.values)},
                       {"x_eigenvalue_sigma", vector_json(g.analysis.x.value_sigma)},
                       {"p_eigenvalues", vector_json(g.analysis.p.values)},
                       {"p_eigenvalue_sigma", vector_json(g.analysis.p.value_sigma)},
                       {"multimode", g.verdict.multimode}};
    groups.push_back(std::move(g));
  }
  write_json_file(out_dir / "ingest_report.json",
                  {{"format", "sqz-ingest-report v1"}, {"groups", summary}});
  return groups;
}

}  // namespace sqz
