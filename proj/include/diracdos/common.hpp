#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace diracdos {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kI{0.0, 1.0};

// Dense solvers only; anything larger is rejected up front.
inline constexpr Index kMaxDimension = 4096;

// Error taxonomy. The CLI maps these onto exit codes 2/3/4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid input data or configuration (bad law, non-Hermitian symbol, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A geometric or mathematical precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// The computation itself failed (budget exhausted, residual too large).
class ComputeError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw PreconditionError(what);
}

inline void validate(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

// Runs task(i) for every i in [0, count). Implementations may run tasks concurrently;
// callers must write results into pre-sized storage indexed by i.
using ParallelFor = std::function<void(std::size_t count, const std::function<void(std::size_t)>& task)>;

inline void serial_for(std::size_t count, const std::function<void(std::size_t)>& task) {
  for (std::size_t i = 0; i < count; ++i) task(i);
}

inline ParallelFor default_executor() { return ParallelFor(serial_for); }

inline double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// ||H - H*||_max <= tol * ||H||_max (absolute when H vanishes).
inline bool is_hermitian(const Mat& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(max_abs(m), 1.0e-300);
  return max_abs(m - m.adjoint()) <= rel_tol * scale;
}

inline double operator_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::BDCSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

}  // namespace diracdos
