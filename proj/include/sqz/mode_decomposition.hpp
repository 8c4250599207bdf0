#pragma once

// Takagi (Autonne) factorization of the gain kernel into independently
// squeezed supermodes, and the analysis modes a shaped local oscillator
// selects: Hermite-Gauss pulses on the full beam and razor-blade half cuts.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "sqz/crystal_optics.hpp"
#include "sqz/errors.hpp"
#include "sqz/lapack.hpp"
#include "sqz/pump_kernel.hpp"

namespace sqz {

/// K = U diag(lambdas) U^T with U unitary and lambdas >= 0 descending.
struct TakagiFactors {
  Eigen::MatrixXcd u;
  Eigen::VectorXd lambdas;
};

struct SqueezingDecomposition {
  SpatioSpectralGrid grid;
  Eigen::MatrixXcd modes;   // columns S_k on the flattened grid
  Eigen::VectorXd lambdas;  // descending, >= 0
  double gain = 0.0;
  double discarded_weight = 0.0;  // sum of dropped lambda^2 over the total

  Eigen::Index size() const { return lambdas.size(); }
  double squeezing_parameter(Eigen::Index k) const { return gain * lambdas(k); }
};

namespace detail {

// Values closer than this (relative to Lambda_0) are treated as one block.
inline constexpr double kDegenerateTolerance = 1e-12;

/// Sign fix for an isolated mode: its largest-magnitude component (first in
/// grid order on ties) gets a positive real part, or a positive imaginary part
/// when the real part vanishes. Only +/-1 is free in a Takagi vector.
inline void fix_sign(Eigen::Ref<Eigen::VectorXcd> v) {
  Eigen::Index best = 0;
  double best_abs = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i));
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  const cplx p = v(best);
  if (p.real() < 0.0 || (p.real() == 0.0 && p.imag() < 0.0)) v = -v;
}

/// Canonical basis of a degenerate block. Within the block any real
/// orthogonal rotation preserves U diag(L) U^T; the rotation chosen makes the
/// real embedding [Re u_0, Im u_0, Re u_1, ...] lower staircase in grid order
/// with a positive leading entry per column (Gram-Schmidt in grid order).
inline void canonicalize_block(Eigen::Ref<Eigen::MatrixXcd> block) {
  const Eigen::Index n = block.rows();
  const Eigen::Index m = block.cols();
  Eigen::MatrixXd embedded(2 * n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) {
      embedded(2 * i, j) = block(i, j).real();
      embedded(2 * i + 1, j) = block(i, j).imag();
    }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(embedded.transpose());
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd rotated = embedded * q;
  for (Eigen::Index j = 0; j < m; ++j)
    if (qr.matrixQR()(j, j) < 0.0) rotated.col(j) = -rotated.col(j);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < n; ++i) block(i, j) = {rotated(2 * i, j), rotated(2 * i + 1, j)};
}

/// Applies the deterministic phase convention to sorted factors.
inline void apply_phase_convention(TakagiFactors& f) {
  const Eigen::Index n = f.lambdas.size();
  if (n == 0) return;
  const double scale = f.lambdas(0);
  Eigen::Index start = 0;
  while (start < n) {
    Eigen::Index end = start + 1;
    while (end < n && f.lambdas(end - 1) - f.lambdas(end) <= kDegenerateTolerance * scale &&
           scale > 0.0)
      ++end;
    if (end - start == 1) {
      fix_sign(f.u.col(start));
    } else {
      canonicalize_block(f.u.middleCols(start, end - start));
    }
    start = end;
  }
}

}  // namespace detail

/// Takagi factorization of a complex symmetric matrix. Real inputs go through
/// the symmetric eigensolver (negative eigenvalues absorbed as a factor i).
/// Complex K = A + iB goes through the real symmetric embedding
/// M = [[A, B], [B, -A]], whose spectrum is +/- the Takagi values: an
/// eigenvector [x; y] of +s gives the Takagi vector x + iy. Null-space
/// vectors are completed to a unitary by QR.
inline TakagiFactors takagi_factorize(const Eigen::MatrixXcd& k) {
  const Eigen::Index n = k.rows();
  if (k.cols() != n) throw InputError("Takagi factorization needs a square matrix");
  TakagiFactors f;
  if (n == 0) return f;
  const double scale = k.cwiseAbs().maxCoeff();
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale)
    throw InputError("kernel is not complex symmetric: max|K - K^T| = " + std::to_string(asym));
  if (scale == 0.0) {
    f.u = Eigen::MatrixXcd::Identity(n, n);
    f.lambdas = Eigen::VectorXd::Zero(n);
    return f;
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  if (k.imag().cwiseAbs().maxCoeff() == 0.0) {
    const auto eig = lapack::symmetric_eigen(k.real());
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return std::abs(eig.values(a)) > std::abs(eig.values(b));
    });
    f.u.resize(n, n);
    f.lambdas.resize(n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::Index src = order[static_cast<std::size_t>(c)];
      const double value = eig.values(src);
      f.lambdas(c) = std::abs(value);
      if (value >= 0.0) {
        f.u.col(c) = eig.vectors.col(src).cast<cplx>();
      } else {
        for (Eigen::Index i = 0; i < n; ++i) f.u(i, c) = cplx(0.0, eig.vectors(i, src));
      }
    }
  } else {
    Eigen::MatrixXd embedded(2 * n, 2 * n);
    embedded << k.real(), k.imag(), k.imag(), -k.real();
    const auto eig = lapack::symmetric_eigen(std::move(embedded));
    const double top = eig.values(2 * n - 1);
    const double null_tol = 2.0 * n * std::numeric_limits<double>::epsilon() * top;
    f.u.resize(n, n);
    f.lambdas.resize(n);
    Eigen::Index rank = 0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::Index src = 2 * n - 1 - c;
      if (eig.values(src) <= null_tol) break;
      f.lambdas(c) = eig.values(src);
      f.u.col(c).real() = eig.vectors.col(src).head(n);
      f.u.col(c).imag() = eig.vectors.col(src).tail(n);
      ++rank;
    }
    // Vectors of tiny +s mix with the -s partners across zero (error ~
    // eps |K| / s), so re-orthonormalize in descending order; the change in
    // U diag(L) U^T stays ~ eps |K|. The same QR completes the null part.
    const Eigen::HouseholderQR<Eigen::MatrixXcd> qr(f.u.leftCols(rank));
    const Eigen::MatrixXcd q = qr.householderQ() * Eigen::MatrixXcd::Identity(n, n);
    for (Eigen::Index c = 0; c < rank; ++c) {
      const cplx r = qr.matrixQR()(c, c);
      f.u.col(c) = q.col(c) * (r / std::abs(r));
    }
    f.u.rightCols(n - rank) = q.rightCols(n - rank);
    f.lambdas.tail(n - rank).setZero();
  }
  detail::apply_phase_convention(f);
  return f;
}

inline SqueezingDecomposition takagi(const GainKernel& kernel) {
  auto f = takagi_factorize(kernel.matrix);
  SqueezingDecomposition d;
  d.grid = kernel.grid;
  d.modes = std::move(f.u);
  d.lambdas = std::move(f.lambdas);
  d.gain = kernel.gain;
  return d;
}

/// Relative Frobenius residual ||K - U diag(L) U^T|| / ||K||.
inline double takagi_residual(const Eigen::MatrixXcd& k, const Eigen::MatrixXcd& u,
                              const Eigen::VectorXd& lambdas) {
  const Eigen::MatrixXcd scaled = u * lambdas.cast<cplx>().asDiagonal();
  const Eigen::MatrixXcd rebuilt = scaled * u.transpose();
  const double norm = k.norm();
  return norm == 0.0 ? rebuilt.norm() : (k - rebuilt).norm() / norm;
}

/// Cheap residual estimate from random probe vectors, O(N^2) per probe.
inline double takagi_probe_residual(const Eigen::MatrixXcd& k, const Eigen::MatrixXcd& u,
                                    const Eigen::VectorXd& lambdas, int probes = 4,
                                    unsigned seed = 12345) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = 0.0;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXcd x(k.cols());
    for (auto& v : x) v = {normal(rng), normal(rng)};
    const Eigen::VectorXcd direct = k * x;
    const Eigen::VectorXcd rebuilt =
        u * (lambdas.cast<cplx>().asDiagonal() * (u.transpose() * x)).eval();
    const double norm = direct.norm();
    worst = std::max(worst, norm == 0.0 ? rebuilt.norm() : (direct - rebuilt).norm() / norm);
  }
  return worst;
}

/// Keeps modes with lambda_k > rel_threshold * lambda_0; records the dropped
/// fraction of sum lambda^2.
inline SqueezingDecomposition truncate(const SqueezingDecomposition& full, double rel_threshold) {
  SqueezingDecomposition out;
  out.grid = full.grid;
  out.gain = full.gain;
  const Eigen::Index n = full.size();
  Eigen::Index keep = 0;
  if (n > 0 && full.lambdas(0) > 0.0)
    while (keep < n && full.lambdas(keep) > rel_threshold * full.lambdas(0)) ++keep;
  out.modes = full.modes.leftCols(keep);
  out.lambdas = full.lambdas.head(keep);
  const double total = full.lambdas.squaredNorm();
  out.discarded_weight =
      total > 0.0 ? full.lambdas.tail(n - keep).squaredNorm() / total : 0.0;
  return out;
}

/// Number of lambda_k above `fraction` of lambda_0.
inline Eigen::Index count_modes_above(const Eigen::VectorXd& lambdas, double fraction) {
  if (lambdas.size() == 0) return 0;
  Eigen::Index count = 0;
  for (Eigen::Index k = 0; k < lambdas.size(); ++k)
    if (lambdas(k) > fraction * lambdas(0)) ++count;
  return count;
}

enum class SpatialPart { full, left_cut, right_cut };
enum class CutSide { left, right };

struct SpectralPart {
  int order = -1;  // Hermite-Gauss order, -1 when not a single HG pulse
  double center_wavelength_m = 0.0;
  double fwhm_m = 0.0;
};

/// A local-oscillator mode on the grid, unit Euclidean norm.
struct AnalysisMode {
  std::string label;
  Eigen::VectorXcd vector;
  SpectralPart spectral_part;
  SpatialPart spatial_part = SpatialPart::full;
  double parent_power = 1.0;  // power fraction kept by a half cut
};

inline cplx inner(const AnalysisMode& a, const AnalysisMode& b) { return a.vector.dot(b.vector); }

/// Amplitude marginal over q of the dominant supermode, unit norm over q.
inline Eigen::VectorXd full_beam_profile(const SqueezingDecomposition& d) {
  if (d.size() == 0) throw InputError("decomposition holds no modes");
  const auto& grid = d.grid;
  Eigen::VectorXd profile = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.q.size()));
  for (std::size_t iq = 0; iq < grid.q.size(); ++iq) {
    double power = 0.0;
    for (std::size_t iw = 0; iw < grid.omega.size(); ++iw)
      power += std::norm(d.modes(static_cast<Eigen::Index>(grid.index(iq, iw)), 0));
    profile(static_cast<Eigen::Index>(iq)) = std::sqrt(power);
  }
  const double norm = profile.norm();
  if (norm == 0.0) throw NumericalError("dominant mode has zero norm");
  return profile / norm;
}

/// Hermite function samples H_n(x) exp(-x^2/2) up to normalization, through
/// the stable recurrence of the normalized functions.
inline double hermite_function(int n, double x) {
  double prev = 0.0;
  double cur = std::exp(-0.5 * x * x);  // pi^(-1/4) dropped
  for (int k = 0; k < n; ++k) {
    const double next = std::sqrt(2.0 / (k + 1)) * x * cur - std::sqrt(double(k) / (k + 1)) * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

/// Hermite-Gauss pulse of order n: H_n(x) exp(-x^2/2) with x = (W - Wc)/s,
/// where |HG_0|^2 has intensity FWHM `fwhm_of_hg0_m` (wavelength) around
/// `center_m`, times the spatial amplitude `spatial_profile` over q.
inline AnalysisMode hermite_gauss_spectral(int order, double center_m, double fwhm_of_hg0_m,
                                           const SpatioSpectralGrid& grid, double omega_signal,
                                           const Eigen::VectorXd& spatial_profile) {
  if (order < 0 || order > 10) throw ConfigError("Hermite-Gauss order must lie in [0, 10]");
  if (!(center_m > 0.0) || !(fwhm_of_hg0_m > 0.0))
    throw ConfigError("Hermite-Gauss center and FWHM must be positive");
  if (spatial_profile.size() != static_cast<Eigen::Index>(grid.q.size()))
    throw InputError("spatial profile does not match the q axis");
  const double width = wavelength_interval_to_omega(fwhm_of_hg0_m, center_m) /
                       (2.0 * std::sqrt(std::log(2.0)));
  const double center = angular_frequency(center_m) - omega_signal;
  if (grid.omega.size() < 2 || grid.omega.front() > center - 4.0 * width ||
      grid.omega.back() < center + 4.0 * width || grid.omega_step() > 0.25 * width)
    throw ConfigError("Hermite-Gauss envelope under-resolved by the Omega grid (order " +
                      std::to_string(order) + ")");

  std::vector<double> spectral(grid.omega.size());
  for (std::size_t iw = 0; iw < grid.omega.size(); ++iw)
    spectral[iw] = hermite_function(order, (grid.omega[iw] - center) / width);

  AnalysisMode mode;
  mode.label = "HG" + std::to_string(order);
  mode.vector.resize(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t iq = 0; iq < grid.q.size(); ++iq)
    for (std::size_t iw = 0; iw < grid.omega.size(); ++iw)
      mode.vector(static_cast<Eigen::Index>(grid.index(iq, iw))) =
          spatial_profile(static_cast<Eigen::Index>(iq)) * spectral[iw];
  const double norm = mode.vector.norm();
  if (norm == 0.0) throw NumericalError("Hermite-Gauss mode vanishes on the grid");
  mode.vector /= norm;
  mode.spectral_part = {order, center_m, fwhm_of_hg0_m};
  return mode;
}

/// Transverse coordinate in the recombined beam's Fourier plane. Each lobe at
/// +/- lobe_q maps onto the same beam, the -q lobe mirrored, so the
/// coordinate is |q| - lobe_q; a collinear beam (lobe_q = 0) uses q itself.
inline double recombined_coordinate(double q, double lobe_q) {
  return lobe_q > 0.0 ? std::abs(q) - lobe_q : q;
}

/// Razor-blade cut through the beam center in the Fourier plane: the left
/// cut keeps negative recombined coordinates, the right cut positive ones.
inline AnalysisMode half_cut_spatial(CutSide side, const AnalysisMode& base,
                                     const SpatioSpectralGrid& grid, double lobe_q) {
  if (base.vector.size() != static_cast<Eigen::Index>(grid.size()))
    throw InputError("mode does not live on this grid");
  AnalysisMode cut = base;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double x = recombined_coordinate(grid.q[grid.q_index(i)], lobe_q);
    const bool keep = side == CutSide::left ? x < 0.0 : x > 0.0;
    if (!keep) cut.vector(static_cast<Eigen::Index>(i)) = 0.0;
  }
  const double power = cut.vector.squaredNorm();
  if (power == 0.0)
    throw InputError("mode " + base.label + " has no power on the " +
                     (side == CutSide::left ? "left" : "right") + " half");
  cut.vector /= std::sqrt(power);
  cut.parent_power = power / base.vector.squaredNorm();
  cut.spatial_part = side == CutSide::left ? SpatialPart::left_cut : SpatialPart::right_cut;
  cut.label = base.label + (side == CutSide::left ? ":L" : ":R");
  return cut;
}

/// (a + b) / sqrt(2), the local oscillator of a pair measurement.
inline AnalysisMode sum_mode(const AnalysisMode& a, const AnalysisMode& b) {
  AnalysisMode s;
  s.label = a.label + "+" + b.label;
  s.vector = (a.vector + b.vector) / std::sqrt(2.0);
  s.spatial_part = a.spatial_part == b.spatial_part ? a.spatial_part : SpatialPart::full;
  return s;
}

/// c_k = <S_k, mode>.
inline Eigen::VectorXcd overlaps(const AnalysisMode& mode, const SqueezingDecomposition& d) {
  if (mode.vector.size() != d.modes.rows())
    throw InputError("grid mismatch between mode " + mode.label + " and decomposition");
  return d.modes.adjoint() * mode.vector;
}

/// Writes the first `count` supermodes as text files mode_XXX.txt in `dir`.
/// Layout: '#'-prefixed header (format tag, index, lambda, g*lambda, axis
/// sizes) then one line per grid point "q_rad_per_m omega_rad_per_s re im".
inline void export_modes(const std::filesystem::path& dir, const SqueezingDecomposition& d,
                         Eigen::Index count) {
  std::filesystem::create_directories(dir);
  count = std::min(count, d.size());
  for (Eigen::Index k = 0; k < count; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "mode_%03d.txt", static_cast<int>(k));
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out.precision(17);
    out << "# sqz-mode v1\n"
        << "# index " << k << "\n"
        << "# lambda " << d.lambdas(k) << "\n"
        << "# gain_lambda " << d.squeezing_parameter(k) << "\n"
        << "# q_points " << d.grid.q.size() << " omega_points " << d.grid.omega.size() << "\n"
        << "# columns: q_rad_per_m omega_rad_per_s re im\n";
    for (std::size_t i = 0; i < d.grid.size(); ++i) {
      const cplx v = d.modes(static_cast<Eigen::Index>(i), k);
      out << d.grid.q[d.grid.q_index(i)] << ' ' << d.grid.omega[d.grid.omega_index(i)] << ' '
          << v.real() << ' ' << v.imag() << '\n';
    }
    if (!out) throw IoError("failed writing " + (dir / name).string());
  }
}

}  // namespace sqz
