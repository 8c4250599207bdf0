#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sqz/mode_decomposition.hpp"
#include "test_support.hpp"

using namespace sqz;
using namespace sqz::testing;

namespace {

Eigen::MatrixXcd random_symmetric(int n, unsigned seed, bool real_only = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXcd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const cplx v(normal(rng), real_only ? 0.0 : normal(rng));
      a(i, j) = v;
      a(j, i) = v;
    }
  return a;
}

double unitarity_error(const Eigen::MatrixXcd& u) {
  return (u.adjoint() * u - Eigen::MatrixXcd::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
}

struct SmallSystem {
  PdcDispersion dispersion{bbo(kTheta0At18), kOmegaSignal};
  PumpProfile pump;
  GainKernel kernel;
  SqueezingDecomposition full;

  explicit SmallSystem(double chirp = 0.0) {
    pump.chirp_s2 = chirp;
    pump.gain = 1.0;
    GridSettings s;
    s.q_points = 8;
    s.omega_points = 40;
    kernel = build_kernel(make_grid(s, pump, dispersion), pump, dispersion);
    full = takagi(kernel);
  }
};

}  // namespace

TEST(Takagi, DiagonalMatrix) {
  Eigen::MatrixXcd k = Eigen::MatrixXcd::Zero(2, 2);
  k(0, 0) = 1.0;
  k(1, 1) = 3.0;
  const auto f = takagi_factorize(k);
  EXPECT_NEAR(f.lambdas(0), 3.0, 1e-14);
  EXPECT_NEAR(f.lambdas(1), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(f.u(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(f.u(0, 1)), 1.0, 1e-14);
  EXPECT_LT(takagi_residual(k, f.u, f.lambdas), 1e-15);
}

TEST(Takagi, SwapMatrixNeedsComplexFactors) {
  Eigen::MatrixXcd k(2, 2);
  k << 0.0, 1.0, 1.0, 0.0;
  const auto f = takagi_factorize(k);
  EXPECT_NEAR(f.lambdas(0), 1.0, 1e-14);
  EXPECT_NEAR(f.lambdas(1), 1.0, 1e-14);
  EXPECT_LT(takagi_residual(k, f.u, f.lambdas), 1e-14);
  EXPECT_LT(unitarity_error(f.u), 1e-14);
}

TEST(Takagi, RandomComplexSymmetricAgainstSvd) {
  const auto k = random_symmetric(12, 7);
  const auto f = takagi_factorize(k);
  EXPECT_LT(takagi_residual(k, f.u, f.lambdas), 1e-12);
  EXPECT_LT(unitarity_error(f.u), 1e-12);
  const Eigen::VectorXd sv = lapack::singular_values(k);
  EXPECT_LT((f.lambdas - sv).cwiseAbs().maxCoeff(), 1e-12 * sv(0));
  for (Eigen::Index i = 1; i < f.lambdas.size(); ++i) EXPECT_GE(f.lambdas(i - 1), f.lambdas(i));
}

TEST(Takagi, RandomRealIndefinite) {
  const auto k = random_symmetric(15, 11, true);
  const auto f = takagi_factorize(k);
  EXPECT_LT(takagi_residual(k, f.u, f.lambdas), 1e-13);
  EXPECT_LT(unitarity_error(f.u), 1e-13);
  EXPECT_LT((f.lambdas - lapack::singular_values(k)).cwiseAbs().maxCoeff(), 1e-12 * f.lambdas(0));
}

TEST(Takagi, RankDeficientComplex) {
  // Rank 3 in dimension 8: null space must still be completed to a unitary.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  Eigen::MatrixXcd v(8, 3);
  for (auto& x : v.reshaped()) x = {normal(rng), normal(rng)};
  const Eigen::MatrixXcd k = v * v.transpose();
  const auto f = takagi_factorize(k);
  EXPECT_LT(takagi_residual(k, f.u, f.lambdas), 1e-12);
  EXPECT_LT(unitarity_error(f.u), 1e-12);
  EXPECT_LT(f.lambdas(3), 1e-12 * f.lambdas(0));
}

TEST(Takagi, RejectsNonSymmetric) {
  Eigen::MatrixXcd k(2, 2);
  k << 1.0, 2.0, 2.5, 1.0;
  EXPECT_THROW(takagi_factorize(k), InputError);
  EXPECT_THROW(takagi_factorize(Eigen::MatrixXcd::Zero(2, 3)), InputError);
}

TEST(Takagi, KernelDecompositionAndDeterminism) {
  for (double chirp : {0.0, 4e-28}) {
    SmallSystem a(chirp);
    SmallSystem b(chirp);
    EXPECT_LT(takagi_residual(a.kernel.matrix, a.full.modes, a.full.lambdas), 1e-10);
    EXPECT_LT(takagi_probe_residual(a.kernel.matrix, a.full.modes, a.full.lambdas), 1e-10);
    EXPECT_LT(unitarity_error(a.full.modes), 1e-10);
    EXPECT_EQ((a.full.modes - b.full.modes).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((a.full.lambdas - b.full.lambdas).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Takagi, TruncationKeepsLeadingModes) {
  SmallSystem s;
  const auto t = truncate(s.full, 1e-3);
  ASSERT_GT(t.size(), 0);
  EXPECT_EQ(t.size(), count_modes_above(s.full.lambdas, 1e-3));
  EXPECT_LT(t.size(), s.full.size());
  EXPECT_GT(t.discarded_weight, 0.0);
  EXPECT_LT(t.discarded_weight, 1e-3);
  EXPECT_EQ((t.modes - s.full.modes.leftCols(t.size())).cwiseAbs().maxCoeff(), 0.0);
}

TEST(HermiteGauss, OrthonormalOnFineGrid) {
  SpatioSpectralGrid g;
  g.q = {0.0};
  const double width = wavelength_interval_to_omega(15e-9, 795e-9) / (2.0 * std::sqrt(std::log(2.0)));
  for (int i = -60; i <= 60; ++i) g.omega.push_back(0.2 * width * i);
  const double omega_signal = angular_frequency(795e-9);
  const Eigen::VectorXd flat = Eigen::VectorXd::Ones(1);
  std::vector<AnalysisMode> modes;
  for (int n = 0; n <= 5; ++n)
    modes.push_back(hermite_gauss_spectral(n, 795e-9, 15e-9, g, omega_signal, flat));
  for (int i = 0; i <= 5; ++i)
    for (int j = 0; j <= 5; ++j)
      EXPECT_NEAR(std::abs(inner(modes[i], modes[j])), i == j ? 1.0 : 0.0, 1e-8) << i << "," << j;
}

TEST(HermiteGauss, FundamentalWidthAndNodes) {
  // |HG0|^2 at half the FWHM from center is exactly one half.
  EXPECT_NEAR(std::pow(hermite_function(0, std::sqrt(std::log(2.0))), 2), 0.5, 1e-15);

  SpatioSpectralGrid g;
  g.q = {0.0};
  const double fwhm = wavelength_interval_to_omega(15e-9, 795e-9);
  EXPECT_NEAR(fwhm, kHg0OmegaFwhm, 1e-9 * kHg0OmegaFwhm);
  const double step = fwhm / 40.0;
  for (int i = -200; i < 200; ++i) g.omega.push_back(step * (i + 0.5));
  const auto hg0 = hermite_gauss_spectral(0, 795e-9, 15e-9, g, angular_frequency(795e-9),
                                          Eigen::VectorXd::Ones(1));
  const double peak = std::norm(hg0.vector.cwiseAbs().maxCoeff());
  int above = 0;
  for (const auto& v : hg0.vector) above += std::norm(v) >= 0.5 * peak;
  EXPECT_NEAR((above - 1) * step, fwhm, step);

  const auto hg1 = hermite_gauss_spectral(1, 795e-9, 15e-9, g, angular_frequency(795e-9),
                                          Eigen::VectorXd::Ones(1));
  int sign_changes = 0;
  for (Eigen::Index i = 1; i < hg1.vector.size(); ++i)
    sign_changes += hg1.vector(i - 1).real() * hg1.vector(i).real() < 0.0;
  EXPECT_EQ(sign_changes, 1);
}

TEST(HermiteGauss, RejectsUnderResolvedGrid) {
  SpatioSpectralGrid g;
  g.q = {0.0};
  g.omega = {-1e13, 0.0, 1e13};
  EXPECT_THROW(hermite_gauss_spectral(0, 795e-9, 15e-9, g, angular_frequency(795e-9),
                                      Eigen::VectorXd::Ones(1)),
               ConfigError);
}

TEST(HalfCut, SplitsPowerAndReconstructs) {
  SmallSystem s;
  const double q0 = s.dispersion.signal_lobe_q();
  AnalysisMode base;
  base.label = "S0";
  base.vector = s.full.modes.col(0);
  const auto left = half_cut_spatial(CutSide::left, base, s.kernel.grid, q0);
  const auto right = half_cut_spatial(CutSide::right, base, s.kernel.grid, q0);
  EXPECT_EQ(left.label, "S0:L");
  EXPECT_EQ(std::abs(inner(left, right)), 0.0);
  EXPECT_NEAR(left.parent_power + right.parent_power, 1.0, 1e-14);
  const Eigen::VectorXcd rebuilt =
      std::sqrt(left.parent_power) * left.vector + std::sqrt(right.parent_power) * right.vector;
  EXPECT_LT((rebuilt - base.vector).norm(), 1e-14);
}

TEST(HalfCut, MirrorSymmetricModeSplitsEvenly) {
  SmallSystem s;
  const double q0 = s.dispersion.signal_lobe_q();
  const auto& g = s.kernel.grid;
  AnalysisMode base;
  base.vector.resize(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = recombined_coordinate(g.q[g.q_index(i)], q0) / q0;
    base.vector(static_cast<Eigen::Index>(i)) = std::exp(-x * x) * (1.0 + 0.1 * g.omega_index(i));
  }
  base.vector.normalize();
  const auto left = half_cut_spatial(CutSide::left, base, g, q0);
  EXPECT_NEAR(left.parent_power, 0.5, 1e-13);
}

TEST(Overlaps, SupermodeProjectsOntoUnitVector) {
  SmallSystem s;
  AnalysisMode m;
  m.vector = s.full.modes.col(2);
  const auto c = overlaps(m, s.full);
  EXPECT_NEAR(std::abs(c(2)), 1.0, 1e-12);
  EXPECT_NEAR(c.squaredNorm(), 1.0, 1e-12);

  const auto t = truncate(s.full, 1e-2);
  const auto hg = hermite_gauss_spectral(0, 795e-9, 7e-9, s.kernel.grid, kOmegaSignal,
                                         full_beam_profile(s.full));
  EXPECT_LE(overlaps(hg, t).squaredNorm(), 1.0 + 1e-12);

  AnalysisMode wrong;
  wrong.vector = Eigen::VectorXcd::Ones(3);
  EXPECT_THROW(overlaps(wrong, s.full), InputError);
}

TEST(Export, WritesHeaderAndGridLines) {
  SmallSystem s;
  const auto dir = std::filesystem::temp_directory_path() / "sqz_export_test";
  std::filesystem::remove_all(dir);
  export_modes(dir, s.full, 2);
  ASSERT_TRUE(std::filesystem::exists(dir / "mode_000.txt"));
  ASSERT_TRUE(std::filesystem::exists(dir / "mode_001.txt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "mode_002.txt"));
  std::ifstream in(dir / "mode_001.txt");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# sqz-mode v1");
  std::size_t data = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') ++data;
  EXPECT_EQ(data, s.kernel.grid.size());
  std::filesystem::remove_all(dir);
}
