#pragma once

// Dispersion of a negative uniaxial crystal in non-collinear type-I
// degenerate down-conversion: Sellmeier indices, index-ellipsoid angle
// dependence, longitudinal wavevector projections and the phase mismatch.

#include <cmath>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sqz/errors.hpp"

namespace sqz {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s

/// Angular frequency (rad/s) of vacuum wavelength `wavelength_m`.
inline double angular_frequency(double wavelength_m) {
  return 2.0 * std::numbers::pi * kSpeedOfLight / wavelength_m;
}

/// Vacuum wavelength (m) of angular frequency `omega`.
inline double vacuum_wavelength(double omega) {
  return 2.0 * std::numbers::pi * kSpeedOfLight / omega;
}

/// Converts a small wavelength interval around `center_m` into an angular
/// frequency interval (rad/s): dOmega = 2 pi c dlambda / lambda^2.
inline double wavelength_interval_to_omega(double interval_m, double center_m) {
  return 2.0 * std::numbers::pi * kSpeedOfLight * interval_m / (center_m * center_m);
}

/// Sellmeier-type dispersion law, wavelength in micrometres:
///
///   n^2(l) = a + sum_k B_k / (l^2 - C_k) - d * l^2
///
/// The classic form B l^2 / (l^2 - C) is expressible as a pole term plus a
/// constant. A set with no poles and d = 0 is a dispersionless medium.
struct Sellmeier {
  double a = 1.0;
  std::vector<std::pair<double, double>> poles;  // (B_k, C_k), C_k in um^2
  double d = 0.0;                                // um^-2
  double min_wavelength_m = 0.0;
  double max_wavelength_m = 0.0;

  bool in_band(double wavelength_m) const {
    return wavelength_m >= min_wavelength_m && wavelength_m <= max_wavelength_m;
  }

  double index(double wavelength_m) const {
    if (!(wavelength_m > 0.0) || !in_band(wavelength_m)) {
      std::ostringstream msg;
      msg << "wavelength " << wavelength_m * 1e9 << " nm outside Sellmeier validity band ["
          << min_wavelength_m * 1e9 << ", " << max_wavelength_m * 1e9 << "] nm";
      throw DomainError(msg.str());
    }
    const double l2 = (wavelength_m * 1e6) * (wavelength_m * 1e6);
    double n2 = a - d * l2;
    for (const auto& [b, c] : poles) n2 += b / (l2 - c);
    if (!(n2 > 0.0)) throw DomainError("Sellmeier law yields non-positive n^2");
    return std::sqrt(n2);
  }
};

/// Uniaxial crystal cut for type-I phase matching.
struct CrystalSpec {
  std::string name = "crystal";
  double length_m = 0.0;
  Sellmeier sellmeier_ordinary;
  Sellmeier sellmeier_extraordinary;
  double theta0_rad = 0.0;              // optical axis to pump axis
  double noncollinear_angle_rad = 0.0;  // signal to pump, inside the crystal

  /// Checks the type invariants. `require_theta0` is false while the angle
  /// is still to be solved.
  void validate(bool require_theta0 = true) const {
    if (!(length_m > 0.0)) throw ConfigError("crystal length must be positive");
    if (require_theta0 && !(theta0_rad > 0.0 && theta0_rad < std::numbers::pi / 2))
      throw ConfigError("crystal theta0 must lie in (0, pi/2)");
    if (!(noncollinear_angle_rad >= 0.0 && noncollinear_angle_rad < std::numbers::pi / 2))
      throw ConfigError("non-collinear angle must lie in [0, pi/2)");
    for (const Sellmeier* s : {&sellmeier_ordinary, &sellmeier_extraordinary}) {
      if (!(s->min_wavelength_m > 0.0 && s->max_wavelength_m > s->min_wavelength_m))
        throw ConfigError("Sellmeier validity band must be a non-empty positive interval");
      constexpr int kSamples = 64;
      for (int i = 0; i <= kSamples; ++i) {
        const double l = s->min_wavelength_m +
                         (s->max_wavelength_m - s->min_wavelength_m) * i / kSamples;
        double n = 0.0;
        try {
          n = s->index(l);
        } catch (const DomainError& e) {
          throw ConfigError(std::string("invalid Sellmeier coefficients: ") + e.what());
        }
        if (!(n > 1.0))
          throw ConfigError("Sellmeier index must exceed 1 across the validity band");
      }
    }
  }
};

inline double refractive_index_ordinary(const CrystalSpec& crystal, double wavelength_m) {
  return crystal.sellmeier_ordinary.index(wavelength_m);
}

/// Index of an extraordinary wave whose wavevector makes `angle` with the
/// optical axis: 1/n^2 = cos^2/n_o^2 + sin^2/n_e^2.
inline double refractive_index_extraordinary(const CrystalSpec& crystal, double wavelength_m,
                                             double angle) {
  if (!(angle >= 0.0 && angle <= std::numbers::pi / 2))
    throw DomainError("extraordinary angle " + std::to_string(angle) +
                      " rad outside [0, pi/2]");
  const double no = crystal.sellmeier_ordinary.index(wavelength_m);
  const double ne = crystal.sellmeier_extraordinary.index(wavelength_m);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return 1.0 / std::sqrt(c * c / (no * no) + s * s / (ne * ne));
}

/// Wavenumbers of one (q_y, Omega) evaluation.
struct WaveVectors {
  double k_s = 0.0;  // signal wavenumber at Omega
  double k_p = 0.0;  // pump wavenumber at (q_y, Omega)
  double k_z = 0.0;  // longitudinal projection of the evaluated field
};

/// Dispersion relations of the degenerate process: ordinary signal around
/// omega_signal, extraordinary pump around 2 omega_signal propagating along
/// z, its orientation tilted by q_y / k_p(0, 0) from theta0.
class PdcDispersion {
 public:
  PdcDispersion(CrystalSpec crystal, double omega_signal)
      : crystal_(std::move(crystal)), omega_signal_(omega_signal) {
    if (!(omega_signal_ > 0.0)) throw ConfigError("signal frequency must be positive");
    pump_reference_k_ = pump_k_at_angle(crystal_.theta0_rad, 0.0);
  }

  const CrystalSpec& crystal() const { return crystal_; }
  double omega_signal() const { return omega_signal_; }
  double pump_reference_k() const { return pump_reference_k_; }

  double signal_k(double omega) const {
    const double w = omega_signal_ + omega;
    return refractive_index_ordinary(crystal_, vacuum_wavelength(w)) * w / kSpeedOfLight;
  }

  double pump_k(double q_y, double omega) const {
    return pump_k_at_angle(crystal_.theta0_rad + q_y / pump_reference_k_, omega);
  }

  /// Transverse wavenumber of the signal direction at the non-collinear angle.
  double signal_lobe_q() const {
    return signal_k(0.0) * std::sin(crystal_.noncollinear_angle_rad);
  }

  WaveVectors signal(double q, double omega) const {
    WaveVectors w;
    w.k_s = signal_k(omega);
    w.k_z = projection(w.k_s, q);
    return w;
  }

  WaveVectors pump(double q_sum, double omega_sum) const {
    WaveVectors w;
    w.k_p = pump_k(q_sum, omega_sum);
    w.k_z = projection(w.k_p, q_sum);
    return w;
  }

  double signal_kz(double q, double omega) const { return projection(signal_k(omega), q); }
  double pump_kz(double q_sum, double omega_sum) const {
    return projection(pump_k(q_sum, omega_sum), q_sum);
  }

  /// sqrt(k^2 - q^2); rejects evanescent components.
  static double projection(double k, double q) {
    const double kz2 = k * k - q * q;
    if (!(kz2 > 0.0))
      throw DomainError("evanescent component: |q| = " + std::to_string(std::abs(q)) +
                        " rad/m is not below k = " + std::to_string(k) + " rad/m");
    return std::sqrt(kz2);
  }

 private:
  double pump_k_at_angle(double angle, double omega) const {
    const double w = 2.0 * omega_signal_ + omega;
    return refractive_index_extraordinary(crystal_, vacuum_wavelength(w), angle) * w /
           kSpeedOfLight;
  }

  CrystalSpec crystal_;
  double omega_signal_;
  double pump_reference_k_ = 0.0;
};

/// Longitudinal mismatch k_sz(q, W) + k_sz(q', W') - k_pz(q + q', W + W').
/// Symmetric under (q, W) <-> (q', W') bit for bit.
inline double phase_mismatch(double q, double q_prime, double omega, double omega_prime,
                             const PdcDispersion& dispersion) {
  return dispersion.signal_kz(q, omega) + dispersion.signal_kz(q_prime, omega_prime) -
         dispersion.pump_kz(q + q_prime, omega + omega_prime);
}

/// Solves for theta0 such that the degenerate pair at +/- q0 (q0 the
/// transverse wavenumber of `noncollinear_angle`) is perfectly phase matched.
/// Bracketed bisection on [1 deg, 89 deg] down to 1e-12 rad.
inline double solve_phase_matching_angle(const CrystalSpec& crystal, double noncollinear_angle,
                                         double omega_signal) {
  constexpr double kDeg = std::numbers::pi / 180.0;
  constexpr double kTolerance = 1e-12;

  auto mismatch_at = [&](double theta) {
    CrystalSpec trial = crystal;
    trial.theta0_rad = theta;
    trial.noncollinear_angle_rad = noncollinear_angle;
    const PdcDispersion dispersion(std::move(trial), omega_signal);
    const double q0 = dispersion.signal_lobe_q();
    return phase_mismatch(q0, -q0, 0.0, 0.0, dispersion);
  };

  double lo = 1.0 * kDeg;
  double hi = 89.0 * kDeg;
  double f_lo = mismatch_at(lo);
  const double f_hi = mismatch_at(hi);
  if (f_lo == 0.0) return lo;
  if (f_hi == 0.0) return hi;
  if ((f_lo > 0.0) == (f_hi > 0.0))
    throw NumericalError("no phase matching: mismatch keeps its sign on [1 deg, 89 deg] for " +
                         crystal.name);
  while (hi - lo > kTolerance) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = mismatch_at(mid);
    if (f_mid == 0.0) return mid;
    if ((f_mid > 0.0) == (f_lo > 0.0)) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
    }
  }
  const double theta = 0.5 * (lo + hi);

  const double pump_k = 2.0 * std::numbers::pi / vacuum_wavelength(2.0 * omega_signal);
  if (std::abs(mismatch_at(theta)) > 1e-6 * pump_k)
    throw NumericalError("phase-matching root did not converge for " + crystal.name);
  return theta;
}

}  // namespace sqz
