#pragma once

// Homodyne detection of an analysis mode: quadrature variances from the
// supermode overlaps, phase-swept noise traces and their extrema.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/errors.hpp"
#include "sqz/mode_decomposition.hpp"

namespace sqz {

/// How the squeezing parameter r = g Lambda acts on a supermode. The
/// linearized map is the first-order amplifier (1 -/+ r); the exponential map
/// is the unitary completion exp(-/+ r).
enum class Mapping { linearized, exponential };

inline double to_db(double variance) { return 10.0 * std::log10(variance); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

/// Per-supermode response: in shot-noise units a mode with overlap c has
/// V_X = 1 + |c|^2 (a - 1) - b Re(c^2), V_P = 1 + |c|^2 (a - 1) + b Re(c^2).
/// exponential: a = cosh 2r, b = sinh 2r; linearized: a = 1 + r^2, b = 2r.
struct QuadratureResponse {
  double a = 1.0;
  double b = 0.0;
};

inline QuadratureResponse quadrature_response(double r, Mapping mapping) {
  if (mapping == Mapping::exponential) return {std::cosh(2.0 * r), std::sinh(2.0 * r)};
  return {1.0 + r * r, 2.0 * r};
}

struct QuadratureVariances {
  double v_x = 1.0;
  double v_p = 1.0;
  double squeezing_db = 0.0;
  double antisqueezing_db = 0.0;
  double efficiency = 1.0;
};

inline void check_efficiency(double efficiency) {
  if (!(efficiency > 0.0 && efficiency <= 1.0))
    throw InputError("detection efficiency must lie in (0, 1]");
}

/// Quadrature variances (vacuum = 1) of a mode with squared norm `norm2` and
/// supermode overlaps `c`, local-oscillator phase 0 measuring X. Detection
/// efficiency pulls both toward 1: V -> eta V + 1 - eta.
inline QuadratureVariances variances_from_overlaps(const Eigen::VectorXcd& c, double norm2,
                                                   const Eigen::VectorXd& lambdas, double gain,
                                                   Mapping mapping, double efficiency,
                                                   const std::string& label = {}) {
  check_efficiency(efficiency);
  double v_x = norm2;
  double v_p = norm2;
  double captured = 0.0;
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const auto resp = quadrature_response(gain * lambdas(k), mapping);
    const double p = std::norm(c(k));
    const double re_c2 = (c(k) * c(k)).real();
    v_x += p * (resp.a - 1.0) - resp.b * re_c2;
    v_p += p * (resp.a - 1.0) + resp.b * re_c2;
    captured += p;
  }
  if (captured > norm2 * (1.0 + 1e-10))
    throw NumericalError("overlap weights exceed the mode norm: supermodes not orthonormal");
  QuadratureVariances out;
  out.efficiency = efficiency;
  out.v_x = efficiency * v_x + (1.0 - efficiency);
  out.v_p = efficiency * v_p + (1.0 - efficiency);
  if (!(out.v_x > 0.0 && out.v_p > 0.0))
    throw NumericalError("non-positive quadrature variance for mode " + label +
                         " (linearized map beyond its range?)");
  out.squeezing_db = to_db(std::min(out.v_x, out.v_p));
  out.antisqueezing_db = to_db(std::max(out.v_x, out.v_p));
  return out;
}

inline QuadratureVariances mode_variances(const AnalysisMode& mode,
                                          const SqueezingDecomposition& d, Mapping mapping,
                                          double efficiency) {
  return variances_from_overlaps(overlaps(mode, d), mode.vector.squaredNorm(), d.lambdas, d.gain,
                                 mapping, efficiency, mode.label);
}

/// Phase rotation theta in (-pi/2, pi/2] that puts the minimum-variance
/// quadrature on X: theta = -arg(sum_k b_k c_k^2) / 2.
inline double squeezed_quadrature_rotation(const Eigen::VectorXcd& c,
                                           const Eigen::VectorXd& lambdas, double gain,
                                           Mapping mapping) {
  cplx coupling = 0.0;
  for (Eigen::Index k = 0; k < c.size(); ++k)
    coupling += quadrature_response(gain * lambdas(k), mapping).b * c(k) * c(k);
  if (std::abs(coupling) == 0.0) return 0.0;
  double theta = -0.5 * std::atan2(coupling.imag(), coupling.real());
  if (theta <= -0.5 * std::numbers::pi + 1e-9) theta += std::numbers::pi;
  return theta;
}

/// Rotates the mode's phase so that X is its minimum-variance quadrature,
/// as when the local-oscillator phase is referenced to the squeezed
/// quadrature.
inline AnalysisMode align_to_squeezed_quadrature(const AnalysisMode& mode,
                                                 const SqueezingDecomposition& d,
                                                 Mapping mapping) {
  const double theta =
      squeezed_quadrature_rotation(overlaps(mode, d), d.lambdas, d.gain, mapping);
  AnalysisMode out = mode;
  if (theta != 0.0) out.vector *= std::polar(1.0, theta);
  return out;
}

struct ScanSettings {
  double ramp_rate_hz = 0.3;  // LO phase turns per second
  double duration_s = 10.0;
  double sample_rate_hz = 100.0;
  double start_phase_rad = 0.0;
};

/// Scatter of each variance estimate: scaled chi-squared with
/// nu = 2 * effective_samples degrees of freedom.
struct NoiseSettings {
  double effective_samples = 15.0 * (100e3 / 30.0);
  bool noiseless = false;
};

struct ExtremaStats {
  double mean_min = 0.0;
  double mean_max = 0.0;
  double se_min = 0.0;
  double se_max = 0.0;
  // Fitted variance at LO phase 0 (X) and pi/2 (P), referenced to the ramp.
  double mean_x = 0.0;
  double mean_p = 0.0;
  double se_x = 0.0;
  double se_p = 0.0;
  int periods = 0;
};

struct HomodyneTrace {
  std::string label;
  std::vector<double> timestamps;        // s
  std::vector<double> variance_samples;  // shot-noise units
  double phase_ramp_rate_hz = 0.3;
  double start_phase_rad = 0.0;
  std::uint64_t rng_seed = 0;
  std::optional<ExtremaStats> segment_stats;
};

/// V(theta) = V_X cos^2 theta + V_P sin^2 theta along a linear LO phase ramp.
inline HomodyneTrace synthesize_trace(const QuadratureVariances& variances,
                                      const ScanSettings& scan, const NoiseSettings& noise,
                                      std::uint64_t seed, std::string label = {}) {
  if (!noise.noiseless && !(noise.effective_samples > 0.0))
    throw InputError("effective sample count must be positive");
  if (!(scan.sample_rate_hz > 0.0) || !(scan.duration_s > 0.0) || !(scan.ramp_rate_hz > 0.0))
    throw InputError("scan rates and duration must be positive");
  const auto count = static_cast<std::size_t>(std::llround(scan.duration_s * scan.sample_rate_hz));
  HomodyneTrace trace;
  trace.label = std::move(label);
  trace.phase_ramp_rate_hz = scan.ramp_rate_hz;
  trace.start_phase_rad = scan.start_phase_rad;
  trace.rng_seed = seed;
  trace.timestamps.resize(count);
  trace.variance_samples.resize(count);

  std::mt19937_64 rng(seed);
  const double nu = 2.0 * noise.effective_samples;
  std::chi_squared_distribution<double> chi2(noise.noiseless ? 1.0 : nu);
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / scan.sample_rate_hz;
    const double theta = scan.start_phase_rad + 2.0 * std::numbers::pi * scan.ramp_rate_hz * t;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    double v = variances.v_x * c * c + variances.v_p * s * s;
    if (!noise.noiseless) v *= chi2(rng) / nu;
    trace.timestamps[i] = t;
    trace.variance_samples[i] = v;
  }
  return trace;
}

/// Splits the trace into whole periods of the variance oscillation (half an
/// LO phase turn), fits a + b cos 2theta + c sin 2theta per period, and
/// projects every period's fit on the common phase of the averaged (b, c).
/// Minima and maxima are averaged over periods with standard errors.
inline ExtremaStats extract_extrema(const HomodyneTrace& trace) {
  const auto& t = trace.timestamps;
  const auto& v = trace.variance_samples;
  if (t.size() != v.size() || t.empty()) throw InputError("trace is empty or ragged");
  if (!(trace.phase_ramp_rate_hz > 0.0)) throw InputError("trace has no phase ramp rate");
  const double period = 1.0 / (2.0 * trace.phase_ramp_rate_hz);
  const double span = t.back() - t.front();
  const int periods = static_cast<int>(std::floor(span / period + 1e-9));
  if (periods < 2)
    throw InputError("trace " + trace.label + " spans fewer than 2 oscillation periods");

  std::vector<Eigen::Vector3d> fits;
  std::size_t i = 0;
  for (int p = 0; p < periods; ++p) {
    const double end = t.front() + (p + 1) * period;
    Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    int used = 0;
    for (; i < t.size() && (t[i] < end - 1e-12 * period); ++i) {
      const double theta =
          trace.start_phase_rad + 2.0 * std::numbers::pi * trace.phase_ramp_rate_hz * t[i];
      const Eigen::Vector3d basis(1.0, std::cos(2.0 * theta), std::sin(2.0 * theta));
      normal += basis * basis.transpose();
      rhs += basis * v[i];
      ++used;
    }
    if (used < 3) throw InputError("trace " + trace.label + " has too few samples per period");
    fits.push_back(normal.ldlt().solve(rhs));
  }

  Eigen::Vector2d mean_bc = Eigen::Vector2d::Zero();
  for (const auto& f : fits) mean_bc += f.tail<2>();
  const double amp = mean_bc.norm();
  const Eigen::Vector2d dir = amp > 0.0 ? Eigen::Vector2d(mean_bc / amp) : Eigen::Vector2d(1.0, 0.0);

  std::vector<double> mins;
  std::vector<double> maxs;
  std::vector<double> xs;
  std::vector<double> ps;
  for (const auto& f : fits) {
    xs.push_back(f(0) + f(1));
    ps.push_back(f(0) - f(1));
    // Cos coefficient enters with a minus sign: V = a - A cos(2(theta - theta_min)).
    const double a = f(0);
    const double projected = -(f(1) * dir(0) + f(2) * dir(1));
    const double half_swing = std::abs(projected);
    mins.push_back(a - half_swing);
    maxs.push_back(a + half_swing);
  }
  auto mean_se = [](const std::vector<double>& xs, double& mean, double& se) {
    const double n = static_cast<double>(xs.size());
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    se = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  };
  ExtremaStats stats;
  stats.periods = periods;
  mean_se(mins, stats.mean_min, stats.se_min);
  mean_se(maxs, stats.mean_max, stats.se_max);
  mean_se(xs, stats.mean_x, stats.se_x);
  mean_se(ps, stats.mean_p, stats.se_p);
  return stats;
}

/// Writes "time_s,variance_snu" rows plus a sidecar `<path>.meta.json`.
inline void write_trace_csv(const std::filesystem::path& path, const HomodyneTrace& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "time_s,variance_snu\n";
  for (std::size_t i = 0; i < trace.timestamps.size(); ++i)
    out << trace.timestamps[i] << ',' << trace.variance_samples[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());

  nlohmann::json meta;
  meta["format"] = "sqz-trace v1";
  meta["mode_label"] = trace.label;
  meta["seed"] = trace.rng_seed;
  meta["phase_ramp_rate_hz"] = trace.phase_ramp_rate_hz;
  meta["start_phase_rad"] = trace.start_phase_rad;
  std::ofstream side(path.string() + ".meta.json");
  if (!side) throw IoError("cannot write " + path.string() + ".meta.json");
  side << meta.dump(2) << '\n';
}

/// Reads a trace CSV (and its sidecar when present). Malformed rows raise an
/// IoError naming the line.
inline HomodyneTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace " + path.string());
  HomodyneTrace trace;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  ++line_no;
  if (line.rfind("time_s,variance_snu", 0) != 0)
    throw IoError(path.string() + ":1: expected header 'time_s,variance_snu'");
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    bool ok = comma != std::string::npos;
    double t = 0.0;
    double v = 0.0;
    if (ok) {
      try {
        std::size_t used_t = 0;
        std::size_t used_v = 0;
        const std::string ts = line.substr(0, comma);
        const std::string vs = line.substr(comma + 1);
        t = std::stod(ts, &used_t);
        v = std::stod(vs, &used_v);
        ok = used_t == ts.size() && (used_v == vs.size() || vs.find_first_not_of(" \r", used_v) ==
                                                                std::string::npos);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok || !std::isfinite(t) || !std::isfinite(v) || !(v > 0.0))
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed trace row '" +
                    line + "'");
    trace.timestamps.push_back(t);
    trace.variance_samples.push_back(v);
  }
  const std::filesystem::path meta_path = path.string() + ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream side(meta_path);
    nlohmann::json meta;
    try {
      side >> meta;
      trace.label = meta.value("mode_label", std::string{});
      trace.rng_seed = meta.value("seed", std::uint64_t{0});
      trace.phase_ramp_rate_hz = meta.value("phase_ramp_rate_hz", 0.3);
      trace.start_phase_rad = meta.value("start_phase_rad", 0.0);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(meta_path.string() + ": " + e.what());
    }
  }
  return trace;
}

}  // namespace sqz
