#pragma once

// Pump spatio-spectral amplitude, the (q_y, Omega) grid and the discretized
// low-gain parametric kernel K(x, x') = A_p(q + q', W + W') sinc(Delta l / 2).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <algorithm>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "sqz/crystal_optics.hpp"
#include "sqz/errors.hpp"

namespace sqz {

using cplx = std::complex<double>;

/// Uniform tensor grid over transverse wavenumber q_y (rad/m) and detuning
/// Omega (rad/s) from the degenerate signal frequency. Flattened index is
/// iq * omega.size() + iw.
struct SpatioSpectralGrid {
  std::vector<double> q;
  std::vector<double> omega;

  std::size_t size() const { return q.size() * omega.size(); }
  std::size_t index(std::size_t iq, std::size_t iw) const { return iq * omega.size() + iw; }
  std::size_t q_index(std::size_t flat) const { return flat / omega.size(); }
  std::size_t omega_index(std::size_t flat) const { return flat % omega.size(); }

  /// Axis spacing; a singleton axis has unit measure.
  double q_step() const { return q.size() > 1 ? q[1] - q[0] : 1.0; }
  double omega_step() const { return omega.size() > 1 ? omega[1] - omega[0] : 1.0; }

  void validate() const {
    for (const auto* axis : {&q, &omega}) {
      if (axis->empty()) throw ConfigError("grid axis is empty");
      if (axis->size() < 2) continue;
      const double step = (*axis)[1] - (*axis)[0];
      if (!(step > 0.0)) throw ConfigError("grid axis must be strictly increasing");
      for (std::size_t i = 1; i < axis->size(); ++i) {
        const double d = (*axis)[i] - (*axis)[i - 1];
        if (!(d > 0.0) || std::abs(d - step) > 1e-9 * std::abs(step) +
                                                   1e-12 * std::abs((*axis)[i]))
          throw ConfigError("grid axis must be uniformly spaced and strictly increasing");
      }
    }
  }

  bool operator==(const SpatioSpectralGrid&) const = default;
};

/// Pump pulse: Gaussian in q (cavity waist) and in Omega, optional quadratic
/// spectral phase. `gain` is the low-gain coupling g of the amplifier.
struct PumpProfile {
  double center_wavelength_m = 397.5e-9;
  double spectral_fwhm_m = 1.82e-9;
  double waist_m = 49e-6;
  double chirp_s2 = 0.0;
  double gain = 0.0;

  void validate() const {
    if (!(center_wavelength_m > 0.0)) throw ConfigError("pump center wavelength must be positive");
    if (!(spectral_fwhm_m > 0.0)) throw ConfigError("pump spectral FWHM must be positive");
    if (!(waist_m > 0.0)) throw ConfigError("pump waist must be positive");
    if (!std::isfinite(chirp_s2)) throw ConfigError("pump chirp must be finite");
    if (!(gain >= 0.0) || !std::isfinite(gain)) throw ConfigError("gain must be non-negative");
  }

  double signal_omega() const { return 0.5 * angular_frequency(center_wavelength_m); }

  /// Intensity FWHM of the pump spectrum in angular frequency.
  double omega_fwhm() const {
    return wavelength_interval_to_omega(spectral_fwhm_m, center_wavelength_m);
  }

  /// Standard deviation of |A_p|^2 along Omega.
  double omega_sigma() const { return omega_fwhm() / (2.0 * std::sqrt(2.0 * std::log(2.0))); }
};

/// Pump amplitude at summed coordinates, normalized to 1 at the origin:
/// exp(-q^2 w0^2 / 4) exp(-W^2 / (4 sigma^2)) exp(i chirp W^2).
inline cplx pump_amplitude(double q_sum, double omega_sum, const PumpProfile& pump) {
  const double sigma = pump.omega_sigma();
  const double magnitude =
      std::exp(-q_sum * q_sum * pump.waist_m * pump.waist_m / 4.0 -
               omega_sum * omega_sum / (4.0 * sigma * sigma));
  if (pump.chirp_s2 == 0.0) return {magnitude, 0.0};
  return std::polar(magnitude, pump.chirp_s2 * omega_sum * omega_sum);
}

/// Unnormalized sinc, Taylor branch below |x| < 1e-4.
inline double sinc(double x) {
  if (std::abs(x) < 1e-4) {
    const double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0 - x2 * x2 * x2 / 5040.0;
  }
  return std::sin(x) / x;
}

struct GridSettings {
  int q_points = 48;
  int omega_points = 96;
  double q_margin_waists = 4.0;            // lobe margin in units of 1/w0
  double omega_points_per_pump_fwhm = 8.0;
};

/// Estimated phase-matching bandwidth along Omega + Omega' (first sinc zero),
/// from the group-velocity mismatch at the design point.
inline double phase_matching_bandwidth(const PdcDispersion& dispersion) {
  const double q0 = dispersion.signal_lobe_q();
  const double h = 1e-4 * dispersion.omega_signal();
  const double slope =
      (phase_mismatch(q0, -q0, h / 2, h / 2, dispersion) -
       phase_mismatch(q0, -q0, -h / 2, -h / 2, dispersion)) /
      (2.0 * h);
  const double length = dispersion.crystal().length_m;
  if (std::abs(slope) * length < 1e-300) return std::numeric_limits<double>::infinity();
  return 2.0 * std::numbers::pi / (length * std::abs(slope));
}

/// Builds the default analysis grid. The q axis puts each lobe center +/- q0
/// exactly midway between two samples, so a cut through the lobe center never
/// touches a sample. The Omega step resolves the pump FWHM with the requested
/// number of points.
inline SpatioSpectralGrid make_grid(const GridSettings& settings, const PumpProfile& pump,
                                    const PdcDispersion& dispersion) {
  pump.validate();
  if (settings.q_points < 2 || settings.omega_points < 2)
    throw ConfigError("grid needs at least 2 points per axis");
  if (!(settings.q_margin_waists >= 4.0))
    throw ConfigError("grid.q_margin_waists must be at least 4 to cover both lobes");
  if (!(settings.omega_points_per_pump_fwhm >= 8.0))
    throw ConfigError("grid.omega_points_per_pump_fwhm must be at least 8");

  const double q0 = dispersion.signal_lobe_q();
  const double margin = settings.q_margin_waists / pump.waist_m;
  const int nq = settings.q_points;
  const double half = 0.5 * (nq - 1);  // largest |position| in steps

  double dq = 0.0;
  if (q0 > 0.0) {
    const double bound = half * q0 / (q0 + margin);
    // q0 / dq must be an integer for even nq, a half-integer for odd nq.
    const double m = (nq % 2 == 0) ? std::floor(bound) : std::floor(bound - 0.5) + 0.5;
    if (m < 1.0) throw ConfigError("too few q points to resolve the non-collinear lobes");
    dq = q0 / m;
  } else {
    dq = margin / half;
  }

  SpatioSpectralGrid grid;
  grid.q.resize(nq);
  for (int i = 0; i < nq; ++i) grid.q[i] = (i - half) * dq;

  const int nw = settings.omega_points;
  const double dw = pump.omega_fwhm() / settings.omega_points_per_pump_fwhm;
  grid.omega.resize(nw);
  for (int i = 0; i < nw; ++i) grid.omega[i] = (i - 0.5 * (nw - 1)) * dw;

  if (grid.q.front() > -q0 - 4.0 / pump.waist_m || grid.q.back() < q0 + 4.0 / pump.waist_m)
    throw ConfigError("q axis does not cover both lobes plus 4/w0");
  const double needed = 3.0 * pump.omega_sigma() + phase_matching_bandwidth(dispersion);
  if (grid.omega.back() < needed)
    throw ConfigError("Omega axis does not cover 3 pump sigmas plus the phase-matching bandwidth");
  grid.validate();
  return grid;
}

/// Discretized kernel with the quadrature measure (dq dW) folded in. The gain
/// g is carried alongside and multiplies Takagi values downstream.
struct GainKernel {
  SpatioSpectralGrid grid;
  Eigen::MatrixXcd matrix;
  double gain = 0.0;

  bool is_real() const { return matrix.imag().cwiseAbs().maxCoeff() == 0.0; }
};

inline GainKernel build_kernel(const SpatioSpectralGrid& grid, const PumpProfile& pump,
                               const PdcDispersion& dispersion) {
  grid.validate();
  pump.validate();
  dispersion.crystal().validate();
  if (grid.omega.size() > 1 && pump.omega_fwhm() / grid.omega_step() < 8.0 * (1.0 - 1e-9))
    throw ConfigError("grid too coarse: fewer than 8 Omega points per pump bandwidth");

  const std::size_t nq = grid.q.size();
  const std::size_t nw = grid.omega.size();
  const std::size_t n = grid.size();
  const double length = dispersion.crystal().length_m;
  const double measure = grid.q_step() * grid.omega_step();

  std::vector<double> signal_kz(n);
  for (std::size_t iq = 0; iq < nq; ++iq)
    for (std::size_t iw = 0; iw < nw; ++iw)
      signal_kz[grid.index(iq, iw)] = dispersion.signal_kz(grid.q[iq], grid.omega[iw]);

  // Pump quantities depend on (iq + jq, iw + jw) only.
  const std::size_t sq = 2 * nq - 1;
  const std::size_t sw = 2 * nw - 1;
  std::vector<double> pump_kz(sq * sw);
  std::vector<cplx> pump_amp(sq * sw);
  for (std::size_t a = 0; a < sq; ++a) {
    const double q_sum = grid.q[a / 2] + grid.q[a - a / 2];
    for (std::size_t b = 0; b < sw; ++b) {
      const double w_sum = grid.omega[b / 2] + grid.omega[b - b / 2];
      pump_kz[a * sw + b] = dispersion.pump_kz(q_sum, w_sum);
      pump_amp[a * sw + b] = pump_amplitude(q_sum, w_sum, pump);
    }
  }

  GainKernel kernel;
  kernel.grid = grid;
  kernel.gain = pump.gain;
  kernel.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t jq = grid.q_index(j);
    const std::size_t jw = grid.omega_index(j);
    for (std::size_t i = 0; i <= j; ++i) {
      const std::size_t t = (grid.q_index(i) + jq) * sw + grid.omega_index(i) + jw;
      const double delta = signal_kz[i] + signal_kz[j] - pump_kz[t];
      const cplx value = pump_amp[t] * (sinc(0.5 * delta * length) * measure);
      kernel.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
      kernel.matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = value;
    }
  }
  if (!kernel.matrix.allFinite()) throw NumericalError("kernel contains non-finite entries");
  return kernel;
}

// Kernel cache file layout (little-endian, native doubles):
//   8 bytes  magic "SQZKERN1"
//   u64      length of config tag, then the tag bytes
//   u64      nq, u64 nw
//   f64[nq]  q axis, f64[nw] Omega axis
//   f64      gain
//   f64[2 N N] row-major (re, im) pairs
namespace detail {
inline constexpr char kKernelMagic[8] = {'S', 'Q', 'Z', 'K', 'E', 'R', 'N', '1'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("kernel file truncated");
  return v;
}
}  // namespace detail

inline void write_kernel(const std::string& path, const GainKernel& kernel,
                         const std::string& tag = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(detail::kKernelMagic, sizeof(detail::kKernelMagic));
  detail::write_pod<std::uint64_t>(out, tag.size());
  out.write(tag.data(), static_cast<std::streamsize>(tag.size()));
  detail::write_pod<std::uint64_t>(out, kernel.grid.q.size());
  detail::write_pod<std::uint64_t>(out, kernel.grid.omega.size());
  for (double v : kernel.grid.q) detail::write_pod(out, v);
  for (double v : kernel.grid.omega) detail::write_pod(out, v);
  detail::write_pod(out, kernel.gain);
  const auto n = kernel.matrix.rows();
  std::vector<double> row(static_cast<std::size_t>(2 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      row[2 * j] = kernel.matrix(i, j).real();
      row[2 * j + 1] = kernel.matrix(i, j).imag();
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path);
}

/// Reads a kernel cache; `tag` receives the stored config tag.
inline GainKernel read_kernel(const std::string& path, std::string* tag = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, detail::kKernelMagic))
    throw IoError(path + " is not a kernel file");
  const auto tag_len = detail::read_pod<std::uint64_t>(in);
  if (tag_len > (1u << 20)) throw IoError(path + ": corrupt header");
  std::string stored(tag_len, '\0');
  in.read(stored.data(), static_cast<std::streamsize>(tag_len));
  if (tag) *tag = stored;
  const auto nq = detail::read_pod<std::uint64_t>(in);
  const auto nw = detail::read_pod<std::uint64_t>(in);
  if (nq == 0 || nw == 0 || nq * nw > (1u << 16)) throw IoError(path + ": corrupt grid header");
  GainKernel kernel;
  kernel.grid.q.resize(nq);
  kernel.grid.omega.resize(nw);
  for (auto& v : kernel.grid.q) v = detail::read_pod<double>(in);
  for (auto& v : kernel.grid.omega) v = detail::read_pod<double>(in);
  kernel.gain = detail::read_pod<double>(in);
  const auto n = static_cast<Eigen::Index>(nq * nw);
  kernel.matrix.resize(n, n);
  std::vector<double> row(static_cast<std::size_t>(2 * n));
  for (Eigen::Index i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw IoError(path + ": kernel data truncated");
    for (Eigen::Index j = 0; j < n; ++j) kernel.matrix(i, j) = {row[2 * j], row[2 * j + 1]};
  }
  return kernel;
}

}  // namespace sqz
