#pragma once

// Thin wrappers over the LAPACK drivers the library needs: symmetric
// divide-and-conquer eigensolver and divide-and-conquer SVD.

#include <Eigen/Dense>

#include <complex>
#include <string>
#include <vector>

#include "sqz/errors.hpp"

extern "C" {
void dsyevd_(const char* jobz, const char* uplo, const int* n, double* a, const int* lda,
             double* w, double* work, const int* lwork, int* iwork, const int* liwork,
             int* info);
void dgesdd_(const char* jobz, const int* m, const int* n, double* a, const int* lda, double* s,
             double* u, const int* ldu, double* vt, const int* ldvt, double* work,
             const int* lwork, int* iwork, int* info);
void zgesdd_(const char* jobz, const int* m, const int* n, std::complex<double>* a,
             const int* lda, double* s, std::complex<double>* u, const int* ldu,
             std::complex<double>* vt, const int* ldvt, std::complex<double>* work,
             const int* lwork, double* rwork, int* iwork, int* info);
}

namespace sqz::lapack {

struct SymmetricEigen {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns
};

/// Eigendecomposition of a real symmetric matrix (lower triangle referenced).
inline SymmetricEigen symmetric_eigen(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  SymmetricEigen out;
  out.values.resize(n);
  if (n == 0) return out;
  int info = 0;
  int lwork = -1;
  int liwork = -1;
  double work_query = 0.0;
  int iwork_query = 0;
  dsyevd_("V", "L", &n, a.data(), &n, out.values.data(), &work_query, &lwork, &iwork_query,
          &liwork, &info);
  lwork = static_cast<int>(work_query);
  liwork = iwork_query;
  std::vector<double> work(static_cast<std::size_t>(lwork));
  std::vector<int> iwork(static_cast<std::size_t>(liwork));
  dsyevd_("V", "L", &n, a.data(), &n, out.values.data(), work.data(), &lwork, iwork.data(),
          &liwork, &info);
  if (info != 0) throw NumericalError("dsyevd failed, info = " + std::to_string(info));
  out.vectors = std::move(a);
  return out;
}

/// Singular values (descending) of a real matrix.
inline Eigen::VectorXd singular_values(Eigen::MatrixXd a) {
  const int m = static_cast<int>(a.rows());
  const int n = static_cast<int>(a.cols());
  Eigen::VectorXd s(std::min(m, n));
  if (s.size() == 0) return s;
  int info = 0;
  int lwork = -1;
  double work_query = 0.0;
  std::vector<int> iwork(static_cast<std::size_t>(8 * std::min(m, n)));
  int one = 1;
  dgesdd_("N", &m, &n, a.data(), &m, s.data(), nullptr, &one, nullptr, &one, &work_query,
          &lwork, iwork.data(), &info);
  lwork = static_cast<int>(work_query);
  std::vector<double> work(static_cast<std::size_t>(lwork));
  dgesdd_("N", &m, &n, a.data(), &m, s.data(), nullptr, &one, nullptr, &one, work.data(),
          &lwork, iwork.data(), &info);
  if (info != 0) throw NumericalError("dgesdd failed, info = " + std::to_string(info));
  return s;
}

struct ComplexSvd {
  Eigen::MatrixXcd u;
  Eigen::VectorXd s;  // descending
  Eigen::MatrixXcd vh;
};

/// Full SVD of a square complex matrix; `want_vectors` false returns values only.
inline ComplexSvd complex_svd(Eigen::MatrixXcd a, bool want_vectors = true) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n) throw InputError("complex_svd expects a square matrix");
  ComplexSvd out;
  out.s.resize(n);
  if (n == 0) return out;
  const char* job = want_vectors ? "A" : "N";
  int ld = want_vectors ? n : 1;
  if (want_vectors) {
    out.u.resize(n, n);
    out.vh.resize(n, n);
  }
  const std::size_t nn = static_cast<std::size_t>(n);
  std::vector<double> rwork(want_vectors ? 5 * nn * nn + 7 * nn : 7 * nn);
  std::vector<int> iwork(8 * nn);
  int info = 0;
  int lwork = -1;
  std::complex<double> work_query;
  zgesdd_(job, &n, &n, a.data(), &n, out.s.data(), want_vectors ? out.u.data() : nullptr, &ld,
          want_vectors ? out.vh.data() : nullptr, &ld, &work_query, &lwork, rwork.data(),
          iwork.data(), &info);
  lwork = static_cast<int>(work_query.real());
  std::vector<std::complex<double>> work(static_cast<std::size_t>(lwork));
  zgesdd_(job, &n, &n, a.data(), &n, out.s.data(), want_vectors ? out.u.data() : nullptr, &ld,
          want_vectors ? out.vh.data() : nullptr, &ld, work.data(), &lwork, rwork.data(),
          iwork.data(), &info);
  if (info != 0) throw NumericalError("zgesdd failed, info = " + std::to_string(info));
  return out;
}

/// Singular values of a complex matrix, routed through the real driver when
/// the imaginary part vanishes identically.
inline Eigen::VectorXd singular_values(const Eigen::MatrixXcd& a) {
  if (a.imag().cwiseAbs().maxCoeff() == 0.0) return singular_values(Eigen::MatrixXd(a.real()));
  return complex_svd(a, false).s;
}

}  // namespace sqz::lapack
