#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "diracdos/common.hpp"
#include "diracdos/operator_core.hpp"

namespace diracdos {

// Eigenvalues within this distance of a window endpoint count as inside [a, b].
inline constexpr double kWindowTieTolerance = 1e-12;

struct SpectralData {
  RVec eigenvalues;  // ascending
  Mat eigenvectors;  // columns, unitary
  Index dimension = 0;
};

inline SpectralData eigen_hermitian(const Mat& h) {
  validate(is_hermitian(h, 1e-10), "eigen_hermitian: input is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  if (es.info() != Eigen::Success) throw ComputeError("eigen_hermitian: eigensolver did not converge");
  SpectralData out{es.eigenvalues(), es.eigenvectors(), h.rows()};
  // phase convention: the largest-magnitude entry of each column is real positive
  for (Index j = 0; j < out.eigenvectors.cols(); ++j) {
    Index imax = 0;
    out.eigenvectors.col(j).cwiseAbs().maxCoeff(&imax);
    const cplx v = out.eigenvectors(imax, j);
    if (std::abs(v) > 0.0) out.eigenvectors.col(j) *= std::conj(v) / std::abs(v);
    out.eigenvectors(imax, j) = std::abs(out.eigenvectors(imax, j));
  }
  return out;
}

inline SpectralData eigen_hermitian(const DiscreteOperator& op) {
  validate(op.hermitian(), "eigen_hermitian: operator is not flagged Hermitian");
  return eigen_hermitian(op.matrix());
}

inline RVec eigenvalues_hermitian(const Mat& h) {
  validate(is_hermitian(h, 1e-10), "eigenvalues_hermitian: input is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Mat> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ComputeError("eigenvalues_hermitian: eigensolver did not converge");
  return es.eigenvalues();
}

inline bool in_window(double lambda, double a, double b) {
  return lambda >= a - kWindowTieTolerance && lambda <= b + kWindowTieTolerance;
}

inline long count_in_window(const RVec& eigenvalues, double a, double b) {
  require(a < b, "count_in_window: need a < b");
  long c = 0;
  for (Index i = 0; i < eigenvalues.size(); ++i) c += in_window(eigenvalues(i), a, b) ? 1 : 0;
  return c;
}

struct Projector {
  Mat matrix;
  long count = 0;
};

inline Projector spectral_projector(const SpectralData& spec, double a, double b) {
  require(a < b, "spectral_projector: need a < b");
  std::vector<Index> cols;
  for (Index i = 0; i < spec.eigenvalues.size(); ++i)
    if (in_window(spec.eigenvalues(i), a, b)) cols.push_back(i);
  Mat u(spec.dimension, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) u.col(static_cast<Index>(k)) = spec.eigenvectors.col(cols[k]);
  Projector p;
  p.matrix = u * u.adjoint();
  p.count = static_cast<long>(cols.size());
  return p;
}

template <class F>
Mat apply_function_eigen(const SpectralData& spec, F&& f) {
  RVec fv(spec.eigenvalues.size());
  for (Index i = 0; i < fv.size(); ++i) fv(i) = f(spec.eigenvalues(i));
  return spec.eigenvectors * fv.cast<cplx>().asDiagonal() * spec.eigenvectors.adjoint();
}

// (H - z)^{-1}.
inline Mat resolvent(const Mat& h, cplx z) {
  const Index n = h.rows();
  if (std::abs(z.imag()) <= 1e-12) {
    const RVec ev = eigenvalues_hermitian(h);
    double dist = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < ev.size(); ++i) dist = std::min(dist, std::abs(ev(i) - z.real()));
    require(dist > 1e-12, "resolvent: z lies within 1e-12 of the spectrum");
  }
  Mat a = h;
  a.diagonal().array() -= z;
  Eigen::PartialPivLU<Mat> lu(a);
  Mat x = lu.solve(Mat::Identity(n, n));
  if (max_abs(a * x - Mat::Identity(n, n)) > 1e-8) throw ComputeError("resolvent: residual exceeds 1e-8");
  return x;
}

inline Mat resolvent(const DiscreteOperator& op, cplx z) { return resolvent(op.matrix(), z); }

inline RVec singular_values(const Mat& m) {
  if (m.size() == 0) return RVec();
  Eigen::BDCSVD<Mat> svd(m);
  return svd.singularValues();
}

inline double schatten_from_singular_values(const RVec& s, double p) {
  validate(p >= 1.0, "schatten_norm: p must be >= 1");
  if (s.size() == 0) return 0.0;
  if (std::isinf(p)) return s.maxCoeff();
  const double smax = s.maxCoeff();
  if (smax == 0.0) return 0.0;
  // scaled to avoid overflow for large p
  return smax * std::pow((s.array() / smax).pow(p).sum(), 1.0 / p);
}

// (sum_k s_k^p)^{1/p}; p = infinity gives the operator norm.
inline double schatten_norm(const Mat& m, double p) {
  validate(p >= 1.0, "schatten_norm: p must be >= 1");
  return schatten_from_singular_values(singular_values(m), p);
}

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

}  // namespace diracdos
