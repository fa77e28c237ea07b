#pragma once

// Discretizations of sigma.(-i grad), S D0 S + V0 and friends on a periodic box.
//
// State ordering: index = site * n + component, where n is the fiber dimension and
// sites are enumerated row-major over the d grid coordinates (coordinate 0 slowest).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "diracdos/common.hpp"
#include "diracdos/jet.hpp"

namespace diracdos {

inline constexpr int kMaxSpatialDim = 3;
using Point = std::array<double, kMaxSpatialDim>;
using Coords = std::array<int, kMaxSpatialDim>;

// ---------------------------------------------------------------------------
// Pauli matrices

inline Mat pauli_x() {
  Mat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
inline Mat pauli_y() {
  Mat m(2, 2);
  m << 0, cplx(0, -1), cplx(0, 1), 0;
  return m;
}
inline Mat pauli_z() {
  Mat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

// ---------------------------------------------------------------------------
// DiracSymbol

class DiracSymbol {
 public:
  explicit DiracSymbol(std::vector<Mat> sigmas) : sigmas_(std::move(sigmas)) {
    validate(!sigmas_.empty(), "DiracSymbol: need at least one sigma matrix (d >= 1)");
    validate(static_cast<int>(sigmas_.size()) <= kMaxSpatialDim, "DiracSymbol: d > 3 unsupported");
    n_ = static_cast<int>(sigmas_.front().rows());
    validate(n_ >= 1, "DiracSymbol: fiber dimension must be >= 1");
    for (const Mat& s : sigmas_) {
      validate(s.rows() == n_ && s.cols() == n_, "DiracSymbol: sigma matrices must all be n x n");
      validate(max_abs(s - s.adjoint()) <= 1e-12, "DiracSymbol: sigma matrices must be Hermitian");
    }
  }

  int dim() const { return static_cast<int>(sigmas_.size()); }
  int fiber() const { return n_; }
  const std::vector<Mat>& sigmas() const { return sigmas_; }
  const Mat& sigma(int j) const { return sigmas_[static_cast<std::size_t>(j)]; }

  // sigma . p for p in R^d.
  Mat apply(std::span<const double> p) const {
    Mat m = Mat::Zero(n_, n_);
    for (int j = 0; j < dim(); ++j) m += p[static_cast<std::size_t>(j)] * sigmas_[static_cast<std::size_t>(j)];
    return m;
  }

 private:
  std::vector<Mat> sigmas_;
  int n_ = 0;
};

struct EllipticityResult {
  double constant = 0.0;
  bool elliptic = false;
  int directions = 0;
};

// Minimum over sampled unit vectors p of sigma_min(sigma . p). Samples every direction
// with entries in {-1, 0, 1}, then `samples` further directions (equispaced on the
// half circle for d = 2, a fixed pseudo-random set otherwise). A diagnostic, not a
// certified bound.
inline EllipticityResult ellipticity_constant(const DiracSymbol& symbol, int samples) {
  require(samples >= 100, "ellipticity_constant: samples must be >= 100");
  const int d = symbol.dim();
  std::vector<std::vector<double>> dirs;

  std::vector<int> digits(static_cast<std::size_t>(d), -1);
  while (true) {
    std::vector<double> p(digits.begin(), digits.end());
    double n2 = 0.0;
    for (double v : p) n2 += v * v;
    if (n2 > 0.0) {
      for (double& v : p) v /= std::sqrt(n2);
      dirs.push_back(std::move(p));
    }
    int k = 0;
    while (k < d && digits[static_cast<std::size_t>(k)] == 1) digits[static_cast<std::size_t>(k++)] = -1;
    if (k == d) break;
    ++digits[static_cast<std::size_t>(k)];
  }

  if (d == 1) {
    // the unit sphere is {-1, 1}, already covered
  } else if (d == 2) {
    for (int k = 0; k < samples; ++k) {
      const double th = kPi * static_cast<double>(k) / static_cast<double>(samples);
      dirs.push_back({std::cos(th), std::sin(th)});
    }
  } else {
    std::uint64_t state = 0x9E3779B97F4A7C15ull;
    auto next = [&state]() {
      state += 0x9E3779B97F4A7C15ull;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      return static_cast<double>((z ^ (z >> 31)) >> 11) * 0x1.0p-53;
    };
    for (int k = 0; k < samples; ++k) {
      std::vector<double> p(static_cast<std::size_t>(d));
      double n2 = 0.0;
      for (auto& v : p) {
        const double u1 = std::max(next(), 1e-300);
        const double u2 = next();
        v = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
        n2 += v * v;
      }
      for (auto& v : p) v /= std::sqrt(n2);
      dirs.push_back(std::move(p));
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : dirs) {
    Eigen::JacobiSVD<Mat> svd(symbol.apply(p));
    best = std::min(best, svd.singularValues()(svd.singularValues().size() - 1));
  }
  EllipticityResult r;
  r.directions = static_cast<int>(dirs.size());
  if (best <= 1e-12) {
    r.constant = 0.0;
    r.elliptic = false;
  } else {
    r.constant = best;
    r.elliptic = true;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Grid: periodic box of side L centered at the origin, N points per dimension,
// x_j = -L/2 + j h.

class Grid {
 public:
  Grid(int d, double side, int points) : d_(d), side_(side), n_(points) {
    validate(d >= 1 && d <= kMaxSpatialDim, "Grid: dimension must be 1..3");
    validate(side > 0.0, "Grid: box side must be positive");
    validate(points > 0 && points % 2 == 0, "Grid: points per dimension must be even and positive");
    h_ = side_ / static_cast<double>(n_);
    validate(h_ * static_cast<double>(n_) == side_, "Grid: h * N must reproduce L exactly");
    sites_ = 1;
    for (int j = 0; j < d_; ++j) sites_ *= n_;
  }

  // Lattice-aligned grid: integer side, `points_per_unit` points per unit cell.
  static Grid lattice(int d, int side, int points_per_unit) {
    validate(side > 0 && points_per_unit > 0, "Grid: side and points per unit must be positive");
    return Grid(d, static_cast<double>(side), side * points_per_unit);
  }

  int dim() const { return d_; }
  double side() const { return side_; }
  int points() const { return n_; }
  double spacing() const { return h_; }
  Index sites() const { return sites_; }

  double position(int j) const { return -0.5 * side_ + static_cast<double>(j) * h_; }

  // Number of grid points per unit length; throws unless the grid is lattice aligned.
  int points_per_unit() const {
    const double c = static_cast<double>(n_) / side_;
    const double r = std::round(c);
    validate(r >= 1.0 && std::abs(c - r) < 1e-12 && std::abs(std::round(side_) - side_) < 1e-12,
             "Grid: grid is not aligned with the unit lattice");
    return static_cast<int>(r);
  }
  bool lattice_aligned() const {
    const double c = static_cast<double>(n_) / side_;
    return std::abs(c - std::round(c)) < 1e-12 && std::round(c) >= 1.0 &&
           std::abs(std::round(side_) - side_) < 1e-12;
  }
  int integer_side() const { return static_cast<int>(std::lround(side_)); }

  Coords coords(Index site) const {
    Coords c{0, 0, 0};
    for (int j = d_ - 1; j >= 0; --j) {
      c[static_cast<std::size_t>(j)] = static_cast<int>(site % n_);
      site /= n_;
    }
    return c;
  }
  Index site(const Coords& c) const {
    Index s = 0;
    for (int j = 0; j < d_; ++j) s = s * n_ + wrap(c[static_cast<std::size_t>(j)]);
    return s;
  }
  int wrap(int j) const { return ((j % n_) + n_) % n_; }

  Point point(Index site) const {
    const Coords c = coords(site);
    Point x{0, 0, 0};
    for (int j = 0; j < d_; ++j) x[static_cast<std::size_t>(j)] = position(c[static_cast<std::size_t>(j)]);
    return x;
  }

  // p_k = 2 pi k / L, k = -N/2 .. N/2 - 1, in DFT order (index m <-> k = m or m - N).
  double frequency(int m) const {
    const int k = m < n_ / 2 ? m : m - n_;
    return 2.0 * kPi * static_cast<double>(k) / side_;
  }
  std::vector<double> frequencies() const {
    std::vector<double> f;
    f.reserve(static_cast<std::size_t>(n_));
    for (int k = -n_ / 2; k < n_ / 2; ++k) f.push_back(2.0 * kPi * static_cast<double>(k) / side_);
    return f;
  }

  // Minimal-image difference a - b on the circle of circumference L, in (-L/2, L/2].
  double periodic_delta(double a, double b) const {
    double t = std::fmod(a - b, side_);
    if (t > 0.5 * side_) t -= side_;
    if (t <= -0.5 * side_) t += side_;
    return t;
  }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.d_ == b.d_ && a.side_ == b.side_ && a.n_ == b.n_;
  }

 private:
  int d_;
  double side_;
  int n_;
  double h_ = 0.0;
  Index sites_ = 1;
};

// ---------------------------------------------------------------------------
// PeriodicBackground: Z^d-periodic S (positive definite) and V0 (Hermitian), sampled
// on one unit cell at c points per dimension and tiled.

class PeriodicBackground {
 public:
  PeriodicBackground(int d, int n, int cell_points, std::vector<Mat> s_cell, std::vector<Mat> v0_cell,
                     bool uniform = false)
      : d_(d), n_(n), c_(cell_points), uniform_(uniform), s_(std::move(s_cell)), v0_(std::move(v0_cell)) {
    validate(d >= 1 && d <= kMaxSpatialDim, "PeriodicBackground: dimension must be 1..3");
    validate(n >= 1 && cell_points >= 1, "PeriodicBackground: bad fiber or cell size");
    std::size_t expected = 1;
    for (int j = 0; j < d; ++j) expected *= static_cast<std::size_t>(c_);
    validate(s_.size() == expected && v0_.size() == expected, "PeriodicBackground: cell sample count mismatch");
    s_minus_ = std::numeric_limits<double>::infinity();
    s_plus_ = 0.0;
    s_identity_ = true;
    for (std::size_t i = 0; i < expected; ++i) {
      validate(s_[i].rows() == n && s_[i].cols() == n && v0_[i].rows() == n && v0_[i].cols() == n,
               "PeriodicBackground: samples must be n x n");
      validate(max_abs(s_[i] - s_[i].adjoint()) <= 1e-12, "PeriodicBackground: S must be Hermitian");
      validate(max_abs(v0_[i] - v0_[i].adjoint()) <= 1e-12, "PeriodicBackground: V0 must be Hermitian");
      Eigen::SelfAdjointEigenSolver<Mat> es(s_[i], Eigen::EigenvaluesOnly);
      s_minus_ = std::min(s_minus_, es.eigenvalues().minCoeff());
      s_plus_ = std::max(s_plus_, es.eigenvalues().maxCoeff());
      if (max_abs(s_[i] - Mat::Identity(n, n)) != 0.0) s_identity_ = false;
    }
    validate(s_minus_ > 0.0, "PeriodicBackground: S must be positive definite (S_minus > 0)");
  }

  // Constant fields; compatible with any grid.
  static PeriodicBackground constant(int d, const Mat& s, const Mat& v0) {
    return PeriodicBackground(d, static_cast<int>(s.rows()), 1, {s}, {v0}, true);
  }

  // Samples S(x), V0(x) at x = m / c, m in {0..c-1}^d; the functions must be Z^d-periodic.
  template <class SFn, class VFn>
  static PeriodicBackground sampled(int d, int n, int cell_points, SFn&& s_fn, VFn&& v_fn) {
    std::size_t count = 1;
    for (int j = 0; j < d; ++j) count *= static_cast<std::size_t>(cell_points);
    std::vector<Mat> s, v;
    s.reserve(count);
    v.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Point x{0, 0, 0};
      std::size_t r = i;
      for (int j = d - 1; j >= 0; --j) {
        x[static_cast<std::size_t>(j)] = static_cast<double>(r % static_cast<std::size_t>(cell_points)) /
                                         static_cast<double>(cell_points);
        r /= static_cast<std::size_t>(cell_points);
      }
      s.push_back(s_fn(x));
      v.push_back(v_fn(x));
    }
    return PeriodicBackground(d, n, cell_points, std::move(s), std::move(v));
  }

  int dim() const { return d_; }
  int fiber() const { return n_; }
  int cell_points() const { return c_; }
  bool uniform() const { return uniform_; }
  bool s_is_identity() const { return s_identity_; }
  double s_minus() const { return s_minus_; }
  double s_plus() const { return s_plus_; }

  void check_grid(const Grid& g) const {
    require(g.dim() == d_, "PeriodicBackground: grid dimension mismatch");
    if (uniform_) return;
    require(g.lattice_aligned() && g.points_per_unit() == c_,
            "PeriodicBackground: grid must be lattice aligned with the background's cell sampling");
  }

  const Mat& s_at(const Grid& g, Index site) const { return s_[cell_index(g, site)]; }
  const Mat& v0_at(const Grid& g, Index site) const { return v0_[cell_index(g, site)]; }

 private:
  std::size_t cell_index(const Grid& g, Index site) const {
    if (uniform_) return 0;
    const Coords c = g.coords(site);
    std::size_t idx = 0;
    for (int j = 0; j < d_; ++j) {
      // x_j * c = j - N/2 is an integer on aligned grids
      const int m = ((c[static_cast<std::size_t>(j)] - g.points() / 2) % c_ + c_) % c_;
      idx = idx * static_cast<std::size_t>(c_) + static_cast<std::size_t>(m);
    }
    return idx;
  }

  int d_, n_, c_;
  bool uniform_;
  std::vector<Mat> s_, v0_;
  double s_minus_ = 0.0, s_plus_ = 0.0;
  bool s_identity_ = true;
};

// ---------------------------------------------------------------------------
// DiscreteOperator

enum class Backend { fourier_spectral, finite_difference };

inline const char* to_string(Backend b) {
  return b == Backend::fourier_spectral ? "fourier_spectral" : "finite_difference";
}

inline Backend parse_backend(const std::string& s) {
  if (s == "fourier" || s == "fourier_spectral") return Backend::fourier_spectral;
  if (s == "fd" || s == "finite_difference") return Backend::finite_difference;
  throw ValidationError("unknown backend '" + s + "' (expected fourier_spectral or finite_difference)");
}

class DiscreteOperator {
 public:
  DiscreteOperator(Mat matrix, Grid grid, int fiber, Backend backend, bool hermitian = true)
      : matrix_(std::move(matrix)), grid_(grid), fiber_(fiber), backend_(backend), hermitian_(hermitian) {
    const Index dim = static_cast<Index>(fiber) * grid_.sites();
    validate(matrix_.rows() == dim && matrix_.cols() == dim, "DiscreteOperator: dimension must equal n * N^d");
    validate(dim <= kMaxDimension, "DiscreteOperator: dimension " + std::to_string(dim) +
                                       " exceeds the dense cap " + std::to_string(kMaxDimension));
    if (hermitian_) validate(is_hermitian(matrix_, 1e-10), "DiscreteOperator: matrix flagged Hermitian is not");
  }

  const Mat& matrix() const { return matrix_; }
  const Grid& grid() const { return grid_; }
  int fiber() const { return fiber_; }
  Backend backend() const { return backend_; }
  bool hermitian() const { return hermitian_; }
  Index dimension() const { return matrix_.rows(); }

 private:
  Mat matrix_;
  Grid grid_;
  int fiber_;
  Backend backend_;
  bool hermitian_;
};

// ---------------------------------------------------------------------------
// IndicatorField: a grid scalar in [0, 1], e.g. chi_L or a smooth cutoff.

struct SubBox {
  Point center{0, 0, 0};
  Point half_width{0, 0, 0};  // sup-norm half widths; a box covering the torus uses L/2
};

class IndicatorField {
 public:
  IndicatorField(Grid grid, RVec values, SubBox support, bool smooth, double sup_gradient)
      : grid_(grid), values_(std::move(values)), support_(support), smooth_(smooth), sup_gradient_(sup_gradient) {
    validate(values_.size() == grid_.sites(), "IndicatorField: one value per grid site required");
    validate(values_.size() == 0 || (values_.minCoeff() >= 0.0 && values_.maxCoeff() <= 1.0),
             "IndicatorField: values must lie in [0, 1]");
  }

  // Sharp indicator of the half-open box c_j - w_j <= x_j < c_j + w_j (torus coordinates).
  static IndicatorField box(const Grid& g, const Point& center, double half_width) {
    RVec v(g.sites());
    for (Index s = 0; s < g.sites(); ++s) v(s) = in_box(g, g.point(s), center, half_width) ? 1.0 : 0.0;
    SubBox b{center, {half_width, half_width, half_width}};
    return IndicatorField(g, std::move(v), b, false, std::numeric_limits<double>::infinity());
  }

  // chi_L: the centered box of side L.
  static IndicatorField centered_box(const Grid& g, double side) { return box(g, Point{0, 0, 0}, 0.5 * side); }

  // 1 on |x - c|_inf <= inner, 0 on |x - c|_inf >= outer, C^inf in between; |grad| <= 2 / (outer - inner).
  static IndicatorField smooth_box(const Grid& g, const Point& center, double inner, double outer) {
    validate(outer > inner && inner >= 0.0, "IndicatorField: need 0 <= inner < outer");
    RVec v(g.sites());
    const Point x0 = center;
    for (Index s = 0; s < g.sites(); ++s) {
      const Point x = g.point(s);
      double val = 1.0;
      for (int j = 0; j < g.dim(); ++j) {
        const double r = std::abs(g.periodic_delta(x[static_cast<std::size_t>(j)], x0[static_cast<std::size_t>(j)]));
        val *= smooth_step((outer - r) / (outer - inner));
      }
      v(s) = val;
    }
    SubBox b{center, {outer, outer, outer}};
    return IndicatorField(g, std::move(v), b, true, kSmoothStepMaxSlope / (outer - inner));
  }

  // Indicator of the points whose sup-norm torus distance to the box [c - w, c + w) is >= distance.
  static IndicatorField exterior(const Grid& g, const Point& center, double half_width, double distance) {
    RVec v(g.sites());
    for (Index s = 0; s < g.sites(); ++s)
      v(s) = box_distance(g, g.point(s), center, half_width) >= distance - 1e-12 ? 1.0 : 0.0;
    SubBox b{Point{0, 0, 0}, {0.5 * g.side(), 0.5 * g.side(), 0.5 * g.side()}};
    return IndicatorField(g, std::move(v), b, false, std::numeric_limits<double>::infinity());
  }

  static IndicatorField constant(const Grid& g, double c) {
    SubBox b{Point{0, 0, 0}, {0.5 * g.side(), 0.5 * g.side(), 0.5 * g.side()}};
    return IndicatorField(g, RVec::Constant(g.sites(), c), b, true, 0.0);
  }

  const Grid& grid() const { return grid_; }
  const RVec& values() const { return values_; }
  double value(Index site) const { return values_(site); }
  const SubBox& support_box() const { return support_; }
  bool smooth() const { return smooth_; }
  double sup_gradient_bound() const { return sup_gradient_; }

  // Lebesgue measure of the support (grid cells with nonzero value).
  double support_measure() const {
    double cell = 1.0;
    for (int j = 0; j < grid_.dim(); ++j) cell *= grid_.spacing();
    return cell * static_cast<double>((values_.array() != 0.0).count());
  }

  // Grid L^p norm (sum |chi|^p h^d)^(1/p).
  double lp_norm(double p) const {
    double cell = 1.0;
    for (int j = 0; j < grid_.dim(); ++j) cell *= grid_.spacing();
    return std::pow(values_.array().abs().pow(p).sum() * cell, 1.0 / p);
  }

  // Multiplication matrix on C^n-valued grid functions.
  Mat multiplication(int fiber) const {
    RVec diag(grid_.sites() * fiber);
    for (Index s = 0; s < grid_.sites(); ++s)
      for (int a = 0; a < fiber; ++a) diag(s * fiber + a) = values_(s);
    return diag.cast<cplx>().asDiagonal();
  }

  static bool in_box(const Grid& g, const Point& x, const Point& c, double w) {
    for (int j = 0; j < g.dim(); ++j) {
      const double t = g.periodic_delta(x[static_cast<std::size_t>(j)], c[static_cast<std::size_t>(j)]);
      if (!(t >= -w - 1e-12 && t < w - 1e-12)) return false;
    }
    return true;
  }

  static double box_distance(const Grid& g, const Point& x, const Point& c, double w) {
    double dist = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
      const double t = std::abs(g.periodic_delta(x[static_cast<std::size_t>(j)], c[static_cast<std::size_t>(j)]));
      dist = std::max(dist, std::max(0.0, t - w));
    }
    return dist;
  }

 private:
  Grid grid_;
  RVec values_;
  SubBox support_;
  bool smooth_;
  double sup_gradient_;
};

// Sup-norm torus distance between the supports of two fields (min over support points).
inline double support_distance(const IndicatorField& a, const IndicatorField& b) {
  const Grid& g = a.grid();
  require(g == b.grid(), "support_distance: fields live on different grids");
  double best = std::numeric_limits<double>::infinity();
  for (Index s = 0; s < g.sites(); ++s) {
    if (a.value(s) == 0.0) continue;
    const Point x = g.point(s);
    for (Index t = 0; t < g.sites(); ++t) {
      if (b.value(t) == 0.0) continue;
      const Point y = g.point(t);
      double d = 0.0;
      for (int j = 0; j < g.dim(); ++j)
        d = std::max(d, std::abs(g.periodic_delta(x[static_cast<std::size_t>(j)], y[static_cast<std::size_t>(j)])));
      best = std::min(best, d);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Operator builders

// N x N matrix of -i d/dx on the periodic 1D grid.
inline Mat derivative_1d(const Grid& g, Backend backend) {
  const int n = g.points();
  Mat p = Mat::Zero(n, n);
  if (backend == Backend::fourier_spectral) {
    // P(a, b) = (1/N) sum_k p_k exp(2 pi i k (a - b) / N)
    std::vector<cplx> c(static_cast<std::size_t>(n));
    for (int m = 0; m < n; ++m) {
      cplx s = 0.0;
      for (int k = -n / 2; k < n / 2; ++k) {
        const long km = static_cast<long>(k) * m;
        const double ph = 2.0 * kPi * static_cast<double>(((km % n) + n) % n) / static_cast<double>(n);
        s += (2.0 * kPi * static_cast<double>(k) / g.side()) * cplx(std::cos(ph), std::sin(ph));
      }
      c[static_cast<std::size_t>(m)] = s / static_cast<double>(n);
    }
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) p(a, b) = c[static_cast<std::size_t>(((a - b) % n + n) % n)];
    p = 0.5 * (p + p.adjoint()).eval();
  } else {
    const cplx w = -kI / (2.0 * g.spacing());
    for (int a = 0; a < n; ++a) {
      p(a, (a + 1) % n) += w;
      p(a, (a - 1 + n) % n) -= w;
    }
  }
  return p;
}

// sigma . (-i grad) on the grid.
inline DiscreteOperator build_D0(const DiracSymbol& symbol, const Grid& grid, Backend backend) {
  require(grid.dim() == symbol.dim(), "build_D0: grid dimension does not match the symbol");
  const int n = symbol.fiber();
  const Index dim = grid.sites() * n;
  validate(dim <= kMaxDimension, "build_D0: dimension exceeds the dense cap");
  const Mat p1 = derivative_1d(grid, backend);
  Mat d0 = Mat::Zero(dim, dim);
  for (Index s = 0; s < grid.sites(); ++s) {
    const Coords c = grid.coords(s);
    for (int m = 0; m < grid.dim(); ++m) {
      Coords t = c;
      for (int k = 0; k < grid.points(); ++k) {
        const cplx w = p1(c[static_cast<std::size_t>(m)], k);
        if (w == cplx(0.0)) continue;
        t[static_cast<std::size_t>(m)] = k;
        const Index ts = grid.site(t);
        d0.block(s * n, ts * n, n, n) += w * symbol.sigma(m);
      }
    }
  }
  d0 = 0.5 * (d0 + d0.adjoint()).eval();
  return DiscreteOperator(std::move(d0), grid, n, backend);
}

// Block-diagonal multiplication by a per-site n x n field given as a callable site -> Mat.
template <class BlockFn>
Mat block_diagonal(const Grid& g, int n, BlockFn&& fn) {
  Mat m = Mat::Zero(g.sites() * n, g.sites() * n);
  for (Index s = 0; s < g.sites(); ++s) m.block(s * n, s * n, n, n) = fn(s);
  return m;
}

// S D0 S + V0.
inline DiscreteOperator build_H0(const DiracSymbol& symbol, const Grid& grid, const PeriodicBackground& bg,
                                 Backend backend) {
  require(bg.fiber() == symbol.fiber() && bg.dim() == symbol.dim(), "build_H0: background/symbol mismatch");
  bg.check_grid(grid);
  validate(bg.s_minus() > 0.0, "build_H0: background violates S_minus > 0");
  const int n = symbol.fiber();
  Mat h = build_D0(symbol, grid, backend).matrix();
  if (!bg.s_is_identity()) {
    for (Index t = 0; t < grid.sites(); ++t) h.middleCols(t * n, n) = (h.middleCols(t * n, n) * bg.s_at(grid, t)).eval();
    for (Index s = 0; s < grid.sites(); ++s) h.middleRows(s * n, n) = (bg.s_at(grid, s) * h.middleRows(s * n, n)).eval();
  }
  for (Index s = 0; s < grid.sites(); ++s) h.block(s * n, s * n, n, n) += bg.v0_at(grid, s);
  h = 0.5 * (h + h.adjoint()).eval();
  return DiscreteOperator(std::move(h), grid, n, backend);
}

// op M_chi - M_chi op.
inline Mat commutator_with_cutoff(const DiscreteOperator& op, const IndicatorField& cutoff) {
  require(op.grid() == cutoff.grid(), "commutator_with_cutoff: grid mismatch");
  const int n = op.fiber();
  const Mat& h = op.matrix();
  Mat c(h.rows(), h.cols());
  for (Index j = 0; j < h.cols(); ++j) {
    const double xj = cutoff.value(j / n);
    for (Index i = 0; i < h.rows(); ++i) c(i, j) = h(i, j) * (xj - cutoff.value(i / n));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Text dump: row-major, one row per line, entries "re+imi" separated by spaces.

inline std::string format_complex(cplx z) {
  std::ostringstream os;
  os << std::setprecision(17) << z.real();
  if (std::signbit(z.imag()))
    os << '-' << std::setprecision(17) << -z.imag();
  else
    os << '+' << std::setprecision(17) << z.imag();
  os << 'i';
  return os.str();
}

inline cplx parse_complex(const std::string& tok) {
  validate(!tok.empty() && tok.back() == 'i', "matrix dump: malformed entry '" + tok + "'");
  // the split is the last sign not part of an exponent and not at position 0
  std::size_t split = std::string::npos;
  for (std::size_t k = tok.size() - 1; k > 0; --k) {
    if ((tok[k] == '+' || tok[k] == '-') && tok[k - 1] != 'e' && tok[k - 1] != 'E') {
      split = k;
      break;
    }
  }
  validate(split != std::string::npos, "matrix dump: malformed entry '" + tok + "'");
  const double re = std::stod(tok.substr(0, split));
  const double im = std::stod(tok.substr(split, tok.size() - split - 1));
  return {re, im};
}

inline void dump_matrix(std::ostream& os, const Mat& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) os << ' ';
      os << format_complex(m(i, j));
    }
    os << '\n';
  }
}

inline Mat parse_matrix(std::istream& is) {
  std::vector<std::vector<cplx>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<cplx> row;
    std::string tok;
    while (ls >> tok) row.push_back(parse_complex(tok));
    rows.push_back(std::move(row));
  }
  const Index r = static_cast<Index>(rows.size());
  const Index c = r ? static_cast<Index>(rows.front().size()) : 0;
  Mat m(r, c);
  for (Index i = 0; i < r; ++i) {
    validate(static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) == c, "matrix dump: ragged rows");
    for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace diracdos
