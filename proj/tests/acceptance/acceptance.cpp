// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
// Criteria 1-7 share one decomposition of the default kernel; criterion 8
// runs the whole pipeline on the small configuration.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include "sqz/pipeline.hpp"

using namespace sqz;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("%s criterion %d: %s [%s]\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct DefaultSystem {
  ExperimentConfig cfg;
  PdcDispersion dispersion;
  SqueezingDecomposition d;  // truncated, calibrated
  AnalysisMode hg0;
  Eigen::VectorXd profile;
};

std::unique_ptr<DefaultSystem> criterion_1(const ExperimentConfig& cfg) {
  // Random complex-symmetric matrices.
  std::mt19937_64 rng(derive_seed(cfg.seed, 77));
  std::uniform_int_distribution<int> size(4, 64);
  std::normal_distribution<double> normal;
  double worst_res = 0.0;
  double worst_sv = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int n = size(rng);
    Eigen::MatrixXcd k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) k(i, j) = k(j, i) = cplx(normal(rng), normal(rng));
    const auto f = takagi_factorize(k);
    worst_res = std::max(worst_res, takagi_residual(k, f.u, f.lambdas));
    worst_sv = std::max(
        worst_sv, (f.lambdas - lapack::singular_values(k)).cwiseAbs().maxCoeff() / f.lambdas(0));
  }

  // Default kernel.
  const CrystalSpec crystal = resolve_crystal(cfg);
  PdcDispersion dispersion(crystal, cfg.omega_signal());
  const auto grid = make_grid(cfg.grid, cfg.pump, dispersion);
  const GainKernel kernel = build_kernel(grid, cfg.pump, dispersion);
  const auto t0 = std::chrono::steady_clock::now();
  SqueezingDecomposition full = takagi(kernel);
  const double takagi_s = seconds_since(t0);
  const double res = takagi_residual(kernel.matrix, full.modes, full.lambdas);
  const Eigen::VectorXd sv = lapack::singular_values(kernel.matrix.real().eval());
  // Kernel entries carry the measure dq dOmega, so compare relative to Lambda0.
  const double sv_dev = (full.lambdas - sv).cwiseAbs().maxCoeff() / full.lambdas(0);

  const bool ok = worst_res < 1e-10 && worst_sv < 1e-10 && res < 1e-10 && sv_dev < 1e-10 &&
                  takagi_s < 300.0;
  std::ostringstream s;
  s << "random max residual " << worst_res << ", max |lambda - sv| / lambda0 " << worst_sv
    << "; N = " << grid.size() << " residual " << res << ", max |lambda - sv| / lambda0 " << sv_dev
    << ", Takagi "
    << fmt("%.1f", takagi_s) << " s";
  verdict(1, ok, "Takagi reconstruction, SVD agreement and runtime", s.str());

  return std::make_unique<DefaultSystem>(
      DefaultSystem{cfg, dispersion, truncate(full, cfg.analysis.truncation), {}, {}});
}

void criterion_2(const DefaultSystem& sys) {
  const auto count = count_modes_above(sys.d.lambdas, 0.1);
  verdict(2, count >= 4, "at least 4 eigenvalues above 0.1 lambda0",
          std::to_string(count) + " modes above 0.1 lambda0");
}

std::vector<QuadratureVariances> criterion_3(DefaultSystem& sys, std::vector<AnalysisMode>& temporal) {
  const auto& a = sys.cfg.analysis;
  sys.profile = full_beam_profile(sys.d);
  auto hg = [&](int n) {
    return hermite_gauss_spectral(n, a.hg_center_m, a.hg_fwhm_m, sys.d.grid, sys.cfg.omega_signal(),
                                  sys.profile);
  };
  sys.hg0 = hg(0);
  sys.d.gain = calibrate_gain(sys.d, sys.hg0, -0.35, a.mapping, a.efficiency);
  std::vector<QuadratureVariances> v;
  std::ostringstream s;
  s << "g = " << sys.d.gain << ";";
  bool ok = true;
  for (int n = 0; n <= 3; ++n) {
    temporal.push_back(align_to_squeezed_quadrature(hg(n), sys.d, a.mapping));
    v.push_back(mode_variances(temporal.back(), sys.d, a.mapping, a.efficiency));
    s << " HG" << n << " " << fmt("%.4f", v.back().squeezing_db) << " dB";
    if (n == 0) {
      ok = ok && std::abs(v[0].squeezing_db + 0.35) < 1e-9;
    } else {
      ok = ok && v[n].squeezing_db > -0.35 && v[n].squeezing_db < 0.0 &&
           v[n].squeezing_db >= v[n - 1].squeezing_db;
    }
  }
  verdict(3, ok, "calibrated HG0-HG3 squeezing non-increasing within (-0.35, 0) dB", s.str());
  return v;
}

void criteria_4_5(const DefaultSystem& sys, const std::vector<AnalysisMode>& temporal,
                  std::vector<std::vector<AnalysisMode>>& spatial_bases) {
  const auto& a = sys.cfg.analysis;
  const double lobe_q = sys.dispersion.signal_lobe_q();
  std::ostringstream s4;
  std::ostringstream s5;
  bool ok4 = true;
  bool ok5 = true;
  for (std::size_t n = 0; n < temporal.size(); ++n) {
    const AnalysisMode base = temporal[n];
    std::vector<AnalysisMode> halves;
    for (CutSide side : {CutSide::left, CutSide::right})
      halves.push_back(align_to_squeezed_quadrature(
          half_cut_spatial(side, base, sys.d.grid, lobe_q), sys.d, a.mapping));
    spatial_bases.push_back(halves);

    const auto full = mode_variances(base, sys.d, a.mapping, a.efficiency);
    for (std::size_t h = 0; h < 2; ++h) {
      const auto v = mode_variances(halves[h], sys.d, a.mapping, a.efficiency);
      const auto stats = extract_extrema(synthesize_trace(
          v, sys.cfg.scan, sys.cfg.noise, derive_seed(sys.cfg.seed, 5000 + 2 * n + h)));
      const bool squeezed = 1.0 - stats.mean_x > 3.0 * stats.se_x;
      const bool weaker = std::abs(full.squeezing_db) >= std::abs(v.squeezing_db);
      if (n == 0) {
        ok4 = ok4 && squeezed && weaker;
        s4 << (h == 0 ? "HG0 full " + fmt("%.3f", full.squeezing_db) + " dB, L " : ", R ")
           << fmt("%.3f", to_db(stats.mean_x)) << " dB ("
           << fmt("%.1f", (1.0 - stats.mean_x) / stats.se_x) << " sigma)";
      }
    }

    const auto sim = simulate_covariance(orthonormalize(halves), sys.d, a.mapping, a.efficiency, sys.cfg.scan,
                                         sys.cfg.noise, derive_seed(sys.cfg.seed, 6000 + n));
    const auto e = diagonalize_blocks(sim.blocks, a.bootstrap_rounds, derive_seed(sys.cfg.seed, 7000 + n));
    const auto& u = e.x.vectors;
    const bool same = u(0, 0) * u(1, 0) > 0.0;
    const bool flip = u(0, 1) * u(1, 1) < 0.0;
    ok5 = ok5 && same && flip;
    s5 << (n ? "; " : "") << "HG" << n << " (" << fmt("%.3f", u(0, 0)) << ", "
       << fmt("%.3f", u(1, 0)) << ") / (" << fmt("%.3f", u(0, 1)) << ", " << fmt("%.3f", u(1, 1))
       << ")";
  }
  verdict(4, ok4, "both halves squeezed by > 3 sigma, whole beam at least as squeezed", s4.str());
  verdict(5, ok5, "L/R eigenvectors: first same-sign, second opposite-sign for HG0-HG3", s5.str());
}

void criterion_6(const DefaultSystem& sys, const std::vector<AnalysisMode>& temporal,
                 const std::vector<std::vector<AnalysisMode>>& spatial_bases) {
  const auto& a = sys.cfg.analysis;
  NoiseSettings noiseless = sys.cfg.noise;
  noiseless.noiseless = true;
  double worst = 0.0;
  std::vector<std::vector<AnalysisMode>> bases = spatial_bases;
  bases.push_back(orthonormalize(temporal));
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const auto sim = simulate_covariance(bases[b], sys.d, a.mapping, a.efficiency, sys.cfg.scan,
                                         noiseless, derive_seed(sys.cfg.seed, 8000 + b));
    const auto exact = analytic_blocks(bases[b], sys.d, a.mapping, a.efficiency);
    worst = std::max({worst, (sim.blocks.v_x - exact.v_x).cwiseAbs().maxCoeff(),
                      (sim.blocks.v_p - exact.v_p).cwiseAbs().maxCoeff()});
  }

  // Sum-mode assembly from exact variances of random Gaussian covariances.
  std::mt19937_64 rng(derive_seed(sys.cfg.seed, 9000));
  std::normal_distribution<double> normal;
  double worst_rt = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 2 + trial % 7;
    Eigen::MatrixXd g(m, m);
    for (auto& x : g.reshaped()) x = normal(rng);
    const Eigen::MatrixXd vx = g * g.transpose() / m + 0.1 * Eigen::MatrixXd::Identity(m, m);
    const Eigen::MatrixXd vp = vx.inverse();
    std::vector<ModeMeasurement> diag;
    std::vector<PairMeasurement> pairs;
    for (int i = 0; i < m; ++i) diag.push_back({"m" + std::to_string(i), {vx(i, i), 0}, {vp(i, i), 0}});
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j)
        pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                         {"s", {0.5 * (vx(i, i) + vx(j, j)) + vx(i, j), 0},
                          {0.5 * (vp(i, i) + vp(j, j)) + vp(i, j), 0}}});
    const auto blocks = covariance_from_measurements(diag, pairs);
    worst_rt = std::max({worst_rt, (blocks.v_x - vx).cwiseAbs().maxCoeff() / vx.cwiseAbs().maxCoeff(),
                         (blocks.v_p - vp).cwiseAbs().maxCoeff() / vp.cwiseAbs().maxCoeff()});
  }
  std::ostringstream s;
  s << "max |simulated - analytic| " << worst << "; sum-mode assembly relative error " << worst_rt;
  verdict(6, worst < 1e-6 && worst_rt < 1e-14, "covariance oracle and sum-mode assembly", s.str());
}

void criterion_7(const DefaultSystem& sys, const std::vector<AnalysisMode>& temporal) {
  const auto& a = sys.cfg.analysis;
  SqueezingDecomposition vacuum = sys.d;
  vacuum.gain = 0.0;
  NoiseSettings noiseless = sys.cfg.noise;
  noiseless.noiseless = true;
  double worst_exact = 0.0;
  double worst_sigma = 0.0;
  std::uint64_t stream = 10000;
  for (const auto& mode : temporal) {
    const auto v = mode_variances(mode, vacuum, a.mapping, 1.0);
    worst_exact = std::max({worst_exact, std::abs(v.v_x - 1.0), std::abs(v.v_p - 1.0)});
    const auto clean = extract_extrema(synthesize_trace(v, sys.cfg.scan, noiseless, 1));
    worst_exact = std::max({worst_exact, std::abs(clean.mean_x - 1.0), std::abs(clean.mean_p - 1.0)});
    const auto noisy = extract_extrema(
        synthesize_trace(v, sys.cfg.scan, sys.cfg.noise, derive_seed(sys.cfg.seed, stream++)));
    worst_sigma = std::max({worst_sigma, std::abs(noisy.mean_x - 1.0) / noisy.se_x,
                            std::abs(noisy.mean_p - 1.0) / noisy.se_p});
  }
  const auto blocks = analytic_blocks(orthonormalize(temporal), vacuum, a.mapping, 1.0);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(blocks.v_x.rows(), blocks.v_x.cols());
  worst_exact = std::max({worst_exact, (blocks.v_x - id).cwiseAbs().maxCoeff(),
                          (blocks.v_p - id).cwiseAbs().maxCoeff()});

  double worst_purity = 0.0;
  for (Eigen::Index k = 0; k < std::min<Eigen::Index>(50, sys.d.size()); ++k) {
    AnalysisMode s;
    s.vector = sys.d.modes.col(k);
    const auto v = mode_variances(s, sys.d, Mapping::exponential, 1.0);
    worst_purity = std::max(worst_purity, std::abs(v.v_x * v.v_p - 1.0));
  }
  std::ostringstream s;
  s << "g = 0: max |V - 1| " << worst_exact << " noiseless, " << fmt("%.2f", worst_sigma)
    << " sigma noisy; max |V_X V_P - 1| over 50 eigenmodes " << worst_purity;
  verdict(7, worst_exact < 1e-12 && worst_sigma < 3.0 && worst_purity < 1e-12,
          "vacuum at zero gain and eigenmode purity", s.str());
}

void criterion_8() {
  const fs::path root = fs::temp_directory_path() / "sqz_acceptance_c8";
  fs::remove_all(root);
  const auto cfg = load_config(SQZ_SMALL_CONFIG, {"output.kernel_cache=false"});
  Pipeline a(cfg, root / "a", nullptr);
  a.run(Stage::report);
  Pipeline(cfg, root / "b", nullptr).run(Stage::report);
  std::size_t files = 0;
  std::size_t differing = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(e.path(), root / "a");
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
  }

  const auto ingested = run_ingest(cfg, root / "a" / "traces", root / "ingest");
  double worst = 0.0;  // eigenvalue deviation in units of the bootstrap sigma
  bool matched = ingested.size() == a.groups().size();
  for (std::size_t g = 0; matched && g < ingested.size(); ++g) {
    const auto& sim = a.groups()[g].analysis;
    const auto& ing = ingested[g].analysis;
    for (const auto* pair : {&sim.x, &sim.p}) {
      const auto& other = pair == &sim.x ? ing.x : ing.p;
      for (Eigen::Index k = 0; k < pair->values.size(); ++k) {
        const double dev = std::abs(pair->values(k) - other.values(k));
        if (dev > pair->value_sigma(k)) matched = false;
        worst = std::max(worst, dev / std::max(pair->value_sigma(k), 1e-300));
      }
    }
  }
  std::ostringstream s;
  s << files << " files, " << differing << " differing; ingest eigenvalue deviation max "
    << worst << " bootstrap sigma over " << ingested.size() << " groups";
  verdict(8, files > 0 && differing == 0 && matched, "byte-identical reruns and trace round trip",
          s.str());
  fs::remove_all(root);
}

}  // namespace

int main() {
  try {
    const auto cfg = load_config(SQZ_DEFAULT_CONFIG);
    const auto sys = criterion_1(cfg);
    criterion_2(*sys);
    std::vector<AnalysisMode> temporal;
    criterion_3(*sys, temporal);
    std::vector<std::vector<AnalysisMode>> spatial;
    criteria_4_5(*sys, temporal, spatial);
    criterion_6(*sys, temporal, spatial);
    criterion_7(*sys, temporal);
    criterion_8();
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
