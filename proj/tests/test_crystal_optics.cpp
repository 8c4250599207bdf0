#include <gtest/gtest.h>

#include <cmath>

#include "sqz/crystal_optics.hpp"
#include "test_support.hpp"

using namespace sqz;
using namespace sqz::testing;

TEST(Sellmeier, BboOrdinaryGolden) {
  const auto c = bbo();
  EXPECT_NEAR(refractive_index_ordinary(c, 795e-9), kNo795, 1e-13);
  EXPECT_NEAR(refractive_index_ordinary(c, 397.5e-9), kNo3975, 1e-13);
}

TEST(Sellmeier, DispersionlessMedium) {
  const auto c = flat_medium(1.5, 1.5, 0.0);
  for (double l : {300e-9, 555e-9, 1000e-9}) EXPECT_DOUBLE_EQ(refractive_index_ordinary(c, l), 1.5);
}

TEST(Sellmeier, OutsideBandNamesTheBand) {
  const auto c = bbo();
  try {
    refractive_index_ordinary(c, 200e-9);
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("220"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("1060"), std::string::npos);
  }
  EXPECT_THROW(refractive_index_ordinary(c, 1.2e-6), DomainError);
}

TEST(Sellmeier, NormalDispersionIsMonotone) {
  const auto c = bbo();
  double prev = refractive_index_ordinary(c, 220e-9);
  for (int i = 1; i <= 200; ++i) {
    const double n = refractive_index_ordinary(c, 220e-9 + i * (840e-9 / 200));
    EXPECT_LT(n, prev);
    prev = n;
  }
}

TEST(Extraordinary, AxisLimits) {
  const auto c = bbo();
  EXPECT_NEAR(refractive_index_extraordinary(c, 397.5e-9, 0.0), kNo3975, 1e-13);
  EXPECT_NEAR(refractive_index_extraordinary(c, 397.5e-9, std::numbers::pi / 2), kNe3975, 1e-13);
  EXPECT_NEAR(refractive_index_extraordinary(c, 397.5e-9, kTheta0At18), kNext3975At18, 1e-13);
  EXPECT_THROW(refractive_index_extraordinary(c, 397.5e-9, -0.1), DomainError);
  EXPECT_THROW(refractive_index_extraordinary(c, 397.5e-9, 1.6), DomainError);
}

TEST(CrystalSpec, Invariants) {
  auto c = bbo(0.5);
  EXPECT_NO_THROW(c.validate());
  c.length_m = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = bbo(0.0);
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(c.validate(false));
  c = bbo(0.5);
  c.sellmeier_ordinary.a = 0.5;  // n < 1 over part of the band
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PhaseMatching, CollinearAngleGolden) {
  const double t = solve_phase_matching_angle(bbo(), 0.0, kOmegaSignal);
  EXPECT_NEAR(t, kTheta0Collinear, 1e-10);
}

TEST(PhaseMatching, NoncollinearAngleGolden) {
  const double t = solve_phase_matching_angle(bbo(), 1.8 * kDeg, kOmegaSignal);
  EXPECT_NEAR(t, kTheta0At18, 1e-10);
  const PdcDispersion d(bbo(t), kOmegaSignal);
  EXPECT_NEAR(d.signal_lobe_q(), kLobeQ, 1e-6);
  const double q0 = d.signal_lobe_q();
  EXPECT_LT(std::abs(phase_mismatch(q0, -q0, 0.0, 0.0, d)), 1e-6 * d.pump_k(0.0, 0.0));
}

TEST(PhaseMatching, ConstantIndexClosedForm) {
  // Index-matched toy: cos^2/no^2 + sin^2/ne^2 = 1/(no cos a)^2.
  const double no = 1.5;
  const double ne = 1.4;
  const double alpha = 1.8 * kDeg;
  const double nt = no * std::cos(alpha);
  const double s2 = (1.0 / (nt * nt) - 1.0 / (no * no)) / (1.0 / (ne * ne) - 1.0 / (no * no));
  const double expected = std::asin(std::sqrt(s2));
  const double omega = angular_frequency(800e-9);
  EXPECT_NEAR(solve_phase_matching_angle(flat_medium(no, ne, alpha), alpha, omega), expected, 1e-11);
}

TEST(PhaseMatching, ImpossibleIndexMatchingRaises) {
  // Positive uniaxial: the pump index never drops to the signal's.
  const auto c = flat_medium(1.5, 1.6, 1.8 * kDeg);
  try {
    solve_phase_matching_angle(c, 1.8 * kDeg, angular_frequency(800e-9));
    FAIL() << "expected no phase matching";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("no phase matching"), std::string::npos);
  }
}

TEST(PhaseMismatch, SwapSymmetryIsExact) {
  const PdcDispersion d(bbo(kTheta0At18), kOmegaSignal);
  for (double f : {0.3, 0.9, 1.2})
    for (double w : {-2e13, 0.0, 3.5e13}) {
      const double a = phase_mismatch(f * kLobeQ, -0.8 * kLobeQ, w, 1e13, d);
      const double b = phase_mismatch(-0.8 * kLobeQ, f * kLobeQ, 1e13, w, d);
      EXPECT_EQ(a, b);
    }
}

TEST(PhaseMismatch, MatchesIndependentEvaluation) {
  const PdcDispersion d(bbo(kTheta0At18), kOmegaSignal);
  EXPECT_NEAR(d.pump_reference_k(), kPumpK00, 1e-5);
  struct Case {
    double q, qp, w, wp, delta;
  };
  const Case cases[] = {
      {0.9 * kLobeQ, -1.1 * kLobeQ, 1e13, -5e12, -6631.702698976807248},
      {1.2 * kLobeQ, -kLobeQ, 3e13, 2e13, -6676.4616621290660852},
      {0.0, 0.0, 1e13, 1e13, 9047.7259157549893445},
  };
  for (const auto& c : cases)
    EXPECT_NEAR(phase_mismatch(c.q, c.qp, c.w, c.wp, d), c.delta, 1e-5) << c.q << " " << c.w;
}

TEST(PhaseMismatch, EvanescentRejected) {
  const PdcDispersion d(bbo(kTheta0At18), kOmegaSignal);
  EXPECT_THROW(phase_mismatch(2e7, 0.0, 0.0, 0.0, d), DomainError);
  EXPECT_THROW(PdcDispersion::projection(1.0, 1.0), DomainError);
}
