#pragma once

// X and P covariance blocks over a mode basis: assembly from mode and
// pairwise sum-mode variances, analytic projection, simulated measurement,
// block eigenanalysis with bootstrap errors and the multimode verdict.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/errors.hpp"
#include "sqz/homodyne.hpp"
#include "sqz/mode_decomposition.hpp"

namespace sqz {

struct Measured {
  double value = 1.0;
  double sigma = 0.0;
};

/// Quadrature variances of one measured mode (basis mode or sum mode).
struct ModeMeasurement {
  std::string label;
  Measured v_x;
  Measured v_p;
};

/// Sum-mode (h_i + h_j)/sqrt(2) measurement for basis indices i < j.
struct PairMeasurement {
  std::size_t i = 0;
  std::size_t j = 0;
  ModeMeasurement m;
};

enum class Provenance { simulated, ingested };

inline const char* to_string(Provenance p) {
  return p == Provenance::simulated ? "simulated" : "ingested";
}

struct CovarianceBlocks {
  std::vector<std::string> labels;
  Eigen::MatrixXd v_x;
  Eigen::MatrixXd v_p;
  Eigen::MatrixXd sigma_x;
  Eigen::MatrixXd sigma_p;
  Provenance provenance = Provenance::simulated;

  std::size_t size() const { return labels.size(); }
};

/// Derives independent, reproducible sub-seeds (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Diagonals from the mode variances; off-diagonals from
/// Cov_ij = V[(h_i + h_j)/sqrt 2] - V_i/2 - V_j/2, errors in quadrature.
inline CovarianceBlocks covariance_from_measurements(const std::vector<ModeMeasurement>& diag,
                                                     const std::vector<PairMeasurement>& pairs,
                                                     Provenance provenance = Provenance::ingested) {
  const std::size_t m = diag.size();
  if (m == 0) throw InputError("empty measurement basis");
  CovarianceBlocks out;
  out.provenance = provenance;
  const auto n = static_cast<Eigen::Index>(m);
  out.v_x = Eigen::MatrixXd::Zero(n, n);
  out.v_p = Eigen::MatrixXd::Zero(n, n);
  out.sigma_x = Eigen::MatrixXd::Zero(n, n);
  out.sigma_p = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < m; ++i) {
    out.labels.push_back(diag[i].label);
    const auto k = static_cast<Eigen::Index>(i);
    out.v_x(k, k) = diag[i].v_x.value;
    out.v_p(k, k) = diag[i].v_p.value;
    out.sigma_x(k, k) = diag[i].v_x.sigma;
    out.sigma_p(k, k) = diag[i].v_p.sigma;
    if (!(diag[i].v_x.value > 0.0 && diag[i].v_p.value > 0.0))
      throw InputError("non-positive variance for mode " + diag[i].label);
  }

  std::vector<const PairMeasurement*> lookup(m * m, nullptr);
  for (const auto& p : pairs) {
    const std::size_t i = std::min(p.i, p.j);
    const std::size_t j = std::max(p.i, p.j);
    if (i == j || j >= m) throw InputError("sum-mode measurement with invalid indices");
    lookup[i * m + j] = &p;
  }
  std::string missing;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      if (lookup[i * m + j] == nullptr)
        missing += (missing.empty() ? "" : ", ") + diag[i].label + "+" + diag[j].label;
  if (!missing.empty()) throw InputError("incomplete basis: missing sum modes " + missing);

  auto fill = [](Eigen::MatrixXd& v, Eigen::MatrixXd& s, Eigen::Index i, Eigen::Index j,
                 const Measured& sum) {
    const double c = sum.value - 0.5 * v(i, i) - 0.5 * v(j, j);
    const double e =
        std::sqrt(sum.sigma * sum.sigma + 0.25 * s(i, i) * s(i, i) + 0.25 * s(j, j) * s(j, j));
    v(i, j) = v(j, i) = c;
    s(i, j) = s(j, i) = e;
  };
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto& pm = lookup[i * m + j]->m;
      const auto a = static_cast<Eigen::Index>(i);
      const auto b = static_cast<Eigen::Index>(j);
      fill(out.v_x, out.sigma_x, a, b, pm.v_x);
      fill(out.v_p, out.sigma_p, a, b, pm.v_p);
    }
  return out;
}

/// Rejects bases that are not orthonormal to 1e-6.
inline void check_orthonormal(const std::vector<AnalysisMode>& basis) {
  for (std::size_t i = 0; i < basis.size(); ++i)
    for (std::size_t j = i; j < basis.size(); ++j) {
      const cplx g = inner(basis[i], basis[j]);
      const double target = i == j ? 1.0 : 0.0;
      if (std::abs(g - target) > 1e-6)
        throw InputError("basis modes " + basis[i].label + ", " + basis[j].label +
                         " are not orthonormal (overlap " + std::to_string(std::abs(g)) + ")");
    }
}

/// Symmetric (Loewdin) orthonormalization H -> H (H^H H)^{-1/2}: the
/// orthonormal basis closest to the input, so discretized Hermite-Gauss modes
/// only move by their grid round-off and keep their quadrature alignment.
inline std::vector<AnalysisMode> orthonormalize(std::vector<AnalysisMode> basis) {
  check_orthonormal(basis);
  const auto m = static_cast<Eigen::Index>(basis.size());
  if (m == 0) return basis;
  Eigen::MatrixXcd h(basis[0].vector.size(), m);
  for (Eigen::Index i = 0; i < m; ++i) h.col(i) = basis[i].vector;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h.adjoint() * h);
  const Eigen::MatrixXcd inv_sqrt = es.eigenvectors() *
                                    es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
                                    es.eigenvectors().adjoint();
  const Eigen::MatrixXcd q = h * inv_sqrt;
  for (Eigen::Index i = 0; i < m; ++i) basis[i].vector = q.col(i);
  return basis;
}

/// Direct projection of the squeezed state on the basis:
///   V^X_ij = Re<h_i,h_j> + sum_k [Re(c_ik conj c_jk)(a_k - 1) - b_k Re(c_ik c_jk)]
/// (+b_k for V^P), then eta V + (1 - eta) I.
inline CovarianceBlocks analytic_blocks(const std::vector<AnalysisMode>& basis,
                                        const SqueezingDecomposition& d, Mapping mapping,
                                        double efficiency) {
  check_efficiency(efficiency);
  const auto m = static_cast<Eigen::Index>(basis.size());
  Eigen::MatrixXcd c(d.size(), m);
  Eigen::MatrixXcd h(d.grid.size(), m);
  for (Eigen::Index i = 0; i < m; ++i) {
    c.col(i) = overlaps(basis[i], d);
    h.col(i) = basis[i].vector;
  }
  Eigen::VectorXd a(d.size());
  Eigen::VectorXd b(d.size());
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(d.size()); ++k) {
    const auto r = quadrature_response(d.squeezing_parameter(k), mapping);
    a(k) = r.a - 1.0;
    b(k) = r.b;
  }
  const Eigen::MatrixXd gram = (h.adjoint() * h).real();
  const Eigen::MatrixXd incoherent = (c.adjoint() * a.asDiagonal() * c).real();
  const Eigen::MatrixXd coherent = (c.transpose() * b.asDiagonal() * c).real();

  CovarianceBlocks out;
  out.provenance = Provenance::simulated;
  for (const auto& mode : basis) out.labels.push_back(mode.label);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(m, m);
  out.v_x = efficiency * (gram + incoherent - coherent) + (1.0 - efficiency) * id;
  out.v_p = efficiency * (gram + incoherent + coherent) + (1.0 - efficiency) * id;
  out.v_x = 0.5 * (out.v_x + out.v_x.transpose()).eval();
  out.v_p = 0.5 * (out.v_p + out.v_p.transpose()).eval();
  out.sigma_x = Eigen::MatrixXd::Zero(m, m);
  out.sigma_p = Eigen::MatrixXd::Zero(m, m);
  return out;
}

struct SimulatedCovariance {
  CovarianceBlocks blocks;
  std::vector<HomodyneTrace> traces;  // basis modes first, then sum modes i < j
  std::vector<ModeMeasurement> diag;
  std::vector<PairMeasurement> pairs;
};

/// Measures every basis mode and every pairwise sum mode with a synthetic
/// phase-swept trace, then assembles the blocks from the fitted X and P
/// variances. Trace k uses sub-seed derive_seed(seed, k).
inline SimulatedCovariance simulate_covariance(const std::vector<AnalysisMode>& basis,
                                               const SqueezingDecomposition& d, Mapping mapping,
                                               double efficiency, const ScanSettings& scan,
                                               const NoiseSettings& noise, std::uint64_t seed) {
  if (basis.empty()) throw InputError("empty basis");
  check_orthonormal(basis);
  SimulatedCovariance out;
  std::uint64_t stream = 0;
  auto measure = [&](const AnalysisMode& mode) {
    const auto v = mode_variances(mode, d, mapping, efficiency);
    HomodyneTrace trace = synthesize_trace(v, scan, noise, derive_seed(seed, stream++), mode.label);
    const ExtremaStats stats = extract_extrema(trace);
    trace.segment_stats = stats;
    ModeMeasurement mm;
    mm.label = mode.label;
    mm.v_x = {stats.mean_x, stats.se_x};
    mm.v_p = {stats.mean_p, stats.se_p};
    out.traces.push_back(std::move(trace));
    return mm;
  };
  for (const auto& mode : basis) out.diag.push_back(measure(mode));
  for (std::size_t i = 0; i < basis.size(); ++i)
    for (std::size_t j = i + 1; j < basis.size(); ++j)
      out.pairs.push_back({i, j, measure(sum_mode(basis[i], basis[j]))});
  out.blocks = covariance_from_measurements(out.diag, out.pairs, Provenance::simulated);

  if (noise.noiseless) {
    // Uncertainty-principle sanity: V_X + V_P - 2 Re G is positive
    // semidefinite (G the Gram matrix, identity up to grid round-off).
    const auto m = static_cast<Eigen::Index>(basis.size());
    Eigen::MatrixXd gram(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) gram(i, j) = inner(basis[i], basis[j]).real();
    const Eigen::MatrixXd s = out.blocks.v_x + out.blocks.v_p - 2.0 * gram;
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s).eigenvalues().minCoeff();
    if (lo < -1e-9)
      throw NumericalError("covariance blocks violate V_X + V_P >= 2 (min eigenvalue " +
                           std::to_string(lo) + ")");
  }
  return out;
}

struct BlockEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns, same order as values
  Eigen::VectorXd value_sigma;
  Eigen::MatrixXd vector_sigma;
};

struct BlockEigenanalysis {
  std::vector<std::string> labels;
  BlockEigen x;  // ascending
  BlockEigen p;  // descending
  int bootstrap_rounds = 0;
};

namespace detail {

inline void fix_vector_signs(Eigen::MatrixXd& vectors) {
  for (Eigen::Index k = 0; k < vectors.cols(); ++k) {
    Eigen::Index arg = 0;
    vectors.col(k).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, k) < 0.0) vectors.col(k) *= -1.0;
  }
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> eigen_sorted(const Eigen::MatrixXd& block,
                                                                 bool ascending) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
  if (es.info() != Eigen::Success) throw NumericalError("block eigendecomposition failed");
  Eigen::VectorXd values = es.eigenvalues();
  Eigen::MatrixXd vectors = es.eigenvectors();
  if (!ascending) {
    values.reverseInPlace();
    vectors = vectors.rowwise().reverse().eval();
  }
  return {values, vectors};
}

inline BlockEigen analyse_block(const Eigen::MatrixXd& block, const Eigen::MatrixXd& sigma,
                                bool ascending, int rounds, std::uint64_t seed) {
  if (block.rows() != block.cols() || (block - block.transpose()).cwiseAbs().maxCoeff() > 0.0)
    throw InputError("covariance block is not symmetric");
  BlockEigen out;
  std::tie(out.values, out.vectors) = eigen_sorted(block, ascending);
  fix_vector_signs(out.vectors);
  const Eigen::MatrixXd rebuilt = out.vectors * out.values.asDiagonal() * out.vectors.transpose();
  if ((rebuilt - block).norm() > 1e-12 * std::max(1.0, block.norm()))
    throw NumericalError("block eigensystem does not reconstruct the block");

  const Eigen::Index m = block.rows();
  out.value_sigma = Eigen::VectorXd::Zero(m);
  out.vector_sigma = Eigen::MatrixXd::Zero(m, m);
  if (rounds == 0) return out;

  Eigen::VectorXd sum_v = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd sum_v2 = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd sum_u = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd sum_u2 = Eigen::MatrixXd::Zero(m, m);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int r = 0; r < rounds; ++r) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    Eigen::MatrixXd sample = block;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = i; j < m; ++j) {
        const double z = normal(rng);
        sample(i, j) = block(i, j) + sigma(i, j) * z;
        sample(j, i) = sample(i, j);
      }
    auto [values, vectors] = eigen_sorted(sample, ascending);
    // Resampled vectors take the sign closest to the nominal ones.
    for (Eigen::Index k = 0; k < m; ++k)
      if (vectors.col(k).dot(out.vectors.col(k)) < 0.0) vectors.col(k) *= -1.0;
    sum_v += values;
    sum_v2 += values.cwiseProduct(values);
    sum_u += vectors;
    sum_u2 += vectors.cwiseProduct(vectors);
  }
  const double n = rounds;
  auto sd = [n](double s, double s2) {
    return std::sqrt(std::max(0.0, (s2 - s * s / n) / (n - 1.0)));
  };
  for (Eigen::Index i = 0; i < m; ++i) {
    out.value_sigma(i) = sd(sum_v(i), sum_v2(i));
    for (Eigen::Index k = 0; k < m; ++k) out.vector_sigma(i, k) = sd(sum_u(i, k), sum_u2(i, k));
  }
  return out;
}

}  // namespace detail

/// Independent symmetric eigendecompositions of the X block (ascending) and
/// the P block (descending). Bootstrap: each entry redrawn from a normal with
/// its standard error, symmetric, `bootstrap_rounds` times.
inline BlockEigenanalysis diagonalize_blocks(const CovarianceBlocks& blocks, int bootstrap_rounds,
                                             std::uint64_t seed = 0) {
  const bool has_errors = blocks.sigma_x.size() > 0 &&
                          (blocks.sigma_x.maxCoeff() > 0.0 || blocks.sigma_p.maxCoeff() > 0.0);
  if (has_errors && bootstrap_rounds < 2)
    throw InputError("bootstrap needs at least 2 rounds when errors are present");
  if (bootstrap_rounds < 0) throw InputError("negative bootstrap round count");
  const Eigen::Index m = blocks.v_x.rows();
  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(m, m);
  const int rounds = has_errors ? bootstrap_rounds : 0;
  BlockEigenanalysis out;
  out.labels = blocks.labels;
  out.bootstrap_rounds = rounds;
  out.x = detail::analyse_block(blocks.v_x, blocks.sigma_x.size() ? blocks.sigma_x : zero, true,
                                rounds, derive_seed(seed, 0x58));
  out.p = detail::analyse_block(blocks.v_p, blocks.sigma_p.size() ? blocks.sigma_p : zero, false,
                                rounds, derive_seed(seed, 0x50));
  return out;
}

struct MultimodeVerdict {
  int count_x = 0;
  int count_p = 0;
  double threshold_sigmas = 3.0;
  bool multimode = false;
};

/// Counts eigenvalues away from vacuum by more than threshold x sigma (with
/// an absolute floor of 1e-9 for noiseless blocks). Multimode iff a block has
/// at least two.
inline MultimodeVerdict multimode_verdict(const BlockEigenanalysis& analysis,
                                          double threshold_sigmas) {
  MultimodeVerdict v;
  v.threshold_sigmas = threshold_sigmas;
  auto count = [threshold_sigmas](const BlockEigen& e) {
    int n = 0;
    for (Eigen::Index k = 0; k < e.values.size(); ++k) {
      const double tol = std::max(threshold_sigmas * e.value_sigma(k), 1e-9);
      if (std::abs(e.values(k) - 1.0) > tol) ++n;
    }
    return n;
  };
  v.count_x = count(analysis.x);
  v.count_p = count(analysis.p);
  v.multimode = v.count_x >= 2 || v.count_p >= 2;
  return v;
}

/// One matrix per file: header "label,<l1>,<l2>,...", one labelled row each.
inline void write_matrix_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& labels, const Eigen::MatrixXd& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "label";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << m(i, j);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

/// Summary consumed by the report layer. Display blocks have the vacuum
/// (identity) removed; stored blocks keep it.
inline nlohmann::json covariance_summary(const CovarianceBlocks& blocks,
                                         const BlockEigenanalysis& analysis,
                                         const MultimodeVerdict& verdict) {
  const auto m = static_cast<Eigen::Index>(blocks.size());
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(m, m);
  auto eig = [](const BlockEigen& e) {
    nlohmann::json j;
    j["eigenvalues"] = vector_json(e.values);
    j["eigenvalue_sigma"] = vector_json(e.value_sigma);
    j["eigenvectors"] = matrix_json(e.vectors);
    j["eigenvector_sigma"] = matrix_json(e.vector_sigma);
    return j;
  };
  nlohmann::json j;
  j["labels"] = blocks.labels;
  j["provenance"] = to_string(blocks.provenance);
  j["v_x"] = matrix_json(blocks.v_x);
  j["v_p"] = matrix_json(blocks.v_p);
  j["sigma_x"] = matrix_json(blocks.sigma_x);
  j["sigma_p"] = matrix_json(blocks.sigma_p);
  j["display_v_x_minus_identity"] = matrix_json(blocks.v_x - id);
  j["display_v_p_minus_identity"] = matrix_json(blocks.v_p - id);
  j["x_block"] = eig(analysis.x);
  j["p_block"] = eig(analysis.p);
  j["bootstrap_rounds"] = analysis.bootstrap_rounds;
  j["verdict"] = {{"count_x", verdict.count_x},
                  {"count_p", verdict.count_p},
                  {"threshold_sigmas", verdict.threshold_sigmas},
                  {"multimode", verdict.multimode}};
  return j;
}

}  // namespace sqz
