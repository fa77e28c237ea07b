#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "diracdos/common.hpp"
#include "diracdos/disorder.hpp"
#include "diracdos/hs_calculus.hpp"
#include "diracdos/models.hpp"
#include "diracdos/operator_core.hpp"
#include "diracdos/spectral.hpp"

namespace diracdos {

// Seed of the r-th realization of an experiment; the same r gives the same omega at every L.
inline std::uint64_t realization_seed(std::uint64_t base, std::size_t r) {
  return splitmix64(base ^ splitmix64(0x632BE59BD9B4E019ull + static_cast<std::uint64_t>(r)));
}

struct SampleStats {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double stderr_ = 0.0;
};

inline SampleStats sample_stats(const std::vector<double>& v) {
  SampleStats s;
  const double n = static_cast<double>(v.size());
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= n;
  if (v.size() > 1) {
    for (double x : v) s.variance += (x - s.mean) * (x - s.mean);
    s.variance /= (n - 1.0);
  }
  s.stderr_ = std::sqrt(s.variance / n);
  return s;
}

// ---------------------------------------------------------------------------
// Wegner scan

struct WegnerOptions {
  int points_per_unit = 4;
  Backend backend = Backend::fourier_spectral;
  bool padded_torus = false;  // H_{w,L} on a torus of side L + pad instead of H^per_{w,L}
  double pad = 10.0;
};

struct WegnerCell {
  double L = 0.0;
  double width = 0.0;
  double a = 0.0, b = 0.0;
  double mean_count = 0.0;
  double count_variance = 0.0;
  double stderr_ = 0.0;
  double ratio = 0.0;  // mean_count / ((b - a) L^d)
};

struct WegnerReport {
  double J_lower = 0.0, J_upper = 0.0;
  std::vector<double> widths;
  std::vector<double> Ls;
  std::size_t n_realizations = 0;
  std::uint64_t seed = 0;
  std::vector<WegnerCell> cells;  // L-major, then width
  // counts[l][w][r]
  std::vector<std::vector<std::vector<long>>> counts;
  std::vector<double> C_J_per_L;
  double C_J = 0.0;
};

inline void require_inside_gap(const Model& model, double a, double b, const std::string& who) {
  require(a < b, who + ": interval must satisfy a < b");
  require(model.inside_gap(a, b), who + ": interval [" + std::to_string(a) + ", " + std::to_string(b) +
                                      "] is not compactly inside the gap (" + std::to_string(model.gap_lower) + ", " +
                                      std::to_string(model.gap_upper) + ")");
}

inline DiscreteOperator finite_volume_operator(const Model& model, const DisorderRealization& omega, double L,
                                               int points_per_unit, Backend backend, bool padded, double pad) {
  if (!padded)
    return build_periodic_restriction(model.symbol, model.background, model.disorder, omega, L, points_per_unit,
                                      backend);
  const double side = L + pad;
  validate(std::abs(side - std::round(side)) < 1e-12, "padded torus side must be an integer");
  const Grid g = Grid::lattice(model.dim(), static_cast<int>(std::lround(side)), points_per_unit);
  return build_H_omega(model.symbol, model.background, model.disorder, omega.restricted(L), g, backend);
}

inline WegnerReport wegner_scan(const Model& model, double J_lower, double J_upper, const std::vector<double>& widths,
                                const std::vector<double>& Ls, std::size_t n_realizations, std::uint64_t seed,
                                const WegnerOptions& opt = {}, ParallelFor executor = default_executor()) {
  require_inside_gap(model, J_lower, J_upper, "wegner_scan");
  validate(!widths.empty() && !Ls.empty() && n_realizations >= 1, "wegner_scan: need widths, Ls and realizations");
  const double center = 0.5 * (J_lower + J_upper);
  for (double w : widths)
    validate(w > 0.0 && w <= (J_upper - J_lower) + 1e-12, "wegner_scan: widths must be positive and fit inside J");
  for (double L : Ls) validate(L >= 1.0, "wegner_scan: box sides must be >= 1");

  WegnerReport rep;
  rep.J_lower = J_lower;
  rep.J_upper = J_upper;
  rep.widths = widths;
  rep.Ls = Ls;
  rep.n_realizations = n_realizations;
  rep.seed = seed;
  rep.counts.assign(Ls.size(), std::vector<std::vector<long>>(widths.size(), std::vector<long>(n_realizations, 0)));

  const double max_L = *std::max_element(Ls.begin(), Ls.end());
  const std::size_t cells = Ls.size() * n_realizations;
  executor(cells, [&](std::size_t cell) {
    const std::size_t l = cell / n_realizations, r = cell % n_realizations;
    const DisorderRealization omega = sample_realization(model.disorder, max_L, realization_seed(seed, r));
    const DiscreteOperator op =
        finite_volume_operator(model, omega, Ls[l], opt.points_per_unit, opt.backend, opt.padded_torus, opt.pad);
    const RVec ev = eigenvalues_hermitian(op.matrix());
    for (std::size_t w = 0; w < widths.size(); ++w)
      rep.counts[l][w][r] = count_in_window(ev, center - 0.5 * widths[w], center + 0.5 * widths[w]);
  });

  for (std::size_t l = 0; l < Ls.size(); ++l) {
    double cj = 0.0;
    for (std::size_t w = 0; w < widths.size(); ++w) {
      std::vector<double> v(rep.counts[l][w].begin(), rep.counts[l][w].end());
      const SampleStats st = sample_stats(v);
      WegnerCell c;
      c.L = Ls[l];
      c.width = widths[w];
      c.a = center - 0.5 * widths[w];
      c.b = center + 0.5 * widths[w];
      c.mean_count = st.mean;
      c.count_variance = st.variance;
      c.stderr_ = st.stderr_;
      c.ratio = st.mean / ((c.b - c.a) * std::pow(Ls[l], model.dim()));
      cj = std::max(cj, c.ratio);
      rep.cells.push_back(c);
    }
    rep.C_J_per_L.push_back(cj);
    rep.C_J = std::max(rep.C_J, cj);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Combes-Thomas scan

struct CtGeometry {
  Point center{0, 0, 0};
  double half_width = 1.0;          // chi_1 = box of this sup-norm half width
  std::vector<double> distances{};  // chi_2 = points at sup distance >= a from the box
};

struct CtOptions {
  double min_distance = 10.0;
  double E_max = 10.0;
  double Y_max = 2.0;
};

struct CtLine {
  double y = 0.0;
  std::vector<double> operator_norms;
  std::vector<double> trace_norms;
  double slope = 0.0;  // decay rate s in log(norm) = c0 - s a (trace norm)
  double intercept = 0.0;
  double r_squared = 0.0;
  double op_slope = 0.0;
  double op_intercept = 0.0;
  double op_r_squared = 0.0;
};

struct DecayFit {
  double E = 0.0;
  std::vector<double> distances;
  double chi1_measure = 0.0;
  std::vector<CtLine> lines;
};

// Indices (state-space) of the nonzero sites of an indicator.
inline std::vector<Index> support_states(const IndicatorField& f, int fiber) {
  std::vector<Index> out;
  for (Index s = 0; s < f.grid().sites(); ++s)
    if (f.value(s) != 0.0)
      for (int a = 0; a < fiber; ++a) out.push_back(s * fiber + a);
  return out;
}

// chi_1 X chi_2 restricted to the supports (zero rows and columns dropped).
inline Mat sandwich(const Mat& x, const IndicatorField& c1, const IndicatorField& c2, int fiber) {
  const auto rows = support_states(c1, fiber), cols = support_states(c2, fiber);
  Mat m(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) =
          c1.value(rows[i] / fiber) * x(rows[i], cols[j]) * c2.value(cols[j] / fiber);
  return m;
}

inline DecayFit combes_thomas_scan(const DiscreteOperator& op, double E, const std::vector<double>& ys,
                                   const CtGeometry& geom, const CtOptions& opt = {}) {
  require(geom.distances.size() >= 4, "combes_thomas_scan: the fit needs at least 4 distances");
  require(std::abs(E) <= opt.E_max, "combes_thomas_scan: |E| exceeds the configured cap E_m");
  const Grid& g = op.grid();
  for (double a : geom.distances) {
    require(a >= opt.min_distance - 1e-12, "combes_thomas_scan: distances must be >= " + std::to_string(opt.min_distance));
    require(geom.half_width + a < 0.5 * g.side() - 1e-12,
            "combes_thomas_scan: torus too small for distance " + std::to_string(a));
  }
  const IndicatorField chi1 = IndicatorField::box(g, geom.center, geom.half_width);
  DecayFit fit;
  fit.E = E;
  fit.distances = geom.distances;
  fit.chi1_measure = chi1.support_measure();
  for (double y : ys) {
    require(y != 0.0 && std::abs(y) <= opt.Y_max, "combes_thomas_scan: need 0 < |y| <= Y");
    const Mat R = resolvent(op.matrix(), cplx(E, y));
    CtLine line;
    line.y = y;
    std::vector<double> la, lt, lo;
    for (double a : geom.distances) {
      const IndicatorField chi2 = IndicatorField::exterior(g, geom.center, geom.half_width, a);
      const RVec s = singular_values(sandwich(R, chi1, chi2, op.fiber()));
      const double opn = s.size() ? s.maxCoeff() : 0.0;
      const double trn = s.sum();
      line.operator_norms.push_back(opn);
      line.trace_norms.push_back(trn);
      la.push_back(a);
      lt.push_back(std::log(std::max(trn, 1e-300)));
      lo.push_back(std::log(std::max(opn, 1e-300)));
    }
    double slope = 0.0;
    linear_fit(la, lt, slope, line.intercept, line.r_squared);
    line.slope = -slope;
    linear_fit(la, lo, slope, line.op_intercept, line.op_r_squared);
    line.op_slope = -slope;
    fit.lines.push_back(std::move(line));
  }
  return fit;
}

// c with s(y) ~ c |y|, averaged over the scanned y values (operator-norm slopes).
inline double fitted_ct_constant(const DecayFit& fit) {
  require(!fit.lines.empty(), "fitted_ct_constant: empty fit");
  double c = std::numeric_limits<double>::infinity();
  for (const CtLine& l : fit.lines) c = std::min(c, l.op_slope / std::abs(l.y));
  return c;
}

struct CtBoundCheck {
  double measured = 0.0;
  double bound = 0.0;
  double distance = 0.0;
  bool holds = false;
};

// measured = ||chi_1 R(E + iy) chi_2||, bound = (2/|y|) exp(-0.9 c |y| dist).
inline CtBoundCheck operator_norm_ct_bound(const DiscreteOperator& op, double E, double y, const IndicatorField& chi1,
                                           const IndicatorField& chi2, double c_fit) {
  require(y != 0.0, "operator_norm_ct_bound: y must be nonzero");
  CtBoundCheck r;
  const bool empty = chi1.values().cwiseAbs().maxCoeff() == 0.0 || chi2.values().cwiseAbs().maxCoeff() == 0.0;
  if (empty) {
    r.measured = 0.0;
    r.distance = std::numeric_limits<double>::infinity();
    r.bound = 0.0;
    r.holds = true;
    return r;
  }
  r.distance = support_distance(chi1, chi2);
  require(r.distance > 0.0, "operator_norm_ct_bound: the supports of chi_1 and chi_2 overlap");
  const Mat R = resolvent(op.matrix(), cplx(E, y));
  r.measured = operator_norm(sandwich(R, chi1, chi2, op.fiber()));
  r.bound = (2.0 / std::abs(y)) * std::exp(-0.9 * c_fit * std::abs(y) * r.distance);
  r.holds = r.measured <= r.bound;
  return r;
}

// ---------------------------------------------------------------------------
// Dilated operator H_{t,eps} = H + t [H, rho], rho = sqrt(eps + |x - x0|^2)

struct DilatedOperator {
  Mat matrix;
  Mat commutator;  // [H, rho]
  double residual = 0.0;  // || e^{-t rho} H e^{t rho} - H_{t,eps} ||
};

inline RVec dilation_weight(const Grid& g, double eps, const Point& x0) {
  RVec rho(g.sites());
  for (Index s = 0; s < g.sites(); ++s) {
    const Point x = g.point(s);
    double r2 = 0.0;
    for (int j = 0; j < g.dim(); ++j) {
      const double t = g.periodic_delta(x[static_cast<std::size_t>(j)], x0[static_cast<std::size_t>(j)]);
      r2 += t * t;
    }
    rho(s) = std::sqrt(eps + r2);
  }
  return rho;
}

inline DilatedOperator dilated_operator(const DiscreteOperator& h, double t, double eps, const Point& x0) {
  require(h.backend() == Backend::finite_difference, "dilated_operator: requires the finite_difference backend");
  require(t >= 0.0 && eps > 0.0, "dilated_operator: need t >= 0 and eps > 0");
  const RVec rho = dilation_weight(h.grid(), eps, x0);
  const int n = h.fiber();
  const Mat& H = h.matrix();
  DilatedOperator out;
  out.commutator = Mat(H.rows(), H.cols());
  Mat conj(H.rows(), H.cols());
  for (Index b = 0; b < H.cols(); ++b)
    for (Index a = 0; a < H.rows(); ++a) {
      const double d = rho(b / n) - rho(a / n);
      out.commutator(a, b) = H(a, b) * d;
      conj(a, b) = H(a, b) * std::exp(t * d);
    }
  out.matrix = H + t * out.commutator;
  out.residual = t == 0.0 ? 0.0 : operator_norm(conj - out.matrix);
  return out;
}

inline DilatedOperator dilated_operator(const Model& model, const DisorderRealization& omega, const Grid& grid, double t,
                                        double eps, const Point& x0, Backend backend) {
  require(backend == Backend::finite_difference, "dilated_operator: requires the finite_difference backend");
  return dilated_operator(build_H_omega(model.symbol, model.background, model.disorder, omega, grid, backend), t, eps,
                          x0);
}

struct NumericalRangeCheck {
  double t = 0.0;
  double perturbation_norm = 0.0;  // || t [H, rho] ||
  double min_norm = 0.0;           // min over samples of ||(H_t - E - iy) psi||
  bool holds = false;              // min_norm >= |y| / 2
};

// Picks t with ||t [H, rho]|| = 0.4 |y| and samples random unit vectors.
inline NumericalRangeCheck numerical_range_check(const DiscreteOperator& h, double E, double y, double eps,
                                                 const Point& x0, int samples, std::uint64_t seed) {
  require(y != 0.0 && samples >= 1, "numerical_range_check: need y != 0 and samples >= 1");
  const DilatedOperator base = dilated_operator(h, 0.0, eps, x0);
  const double cn = operator_norm(base.commutator);
  NumericalRangeCheck r;
  r.t = cn > 0.0 ? 0.4 * std::abs(y) / cn : 1.0;
  const DilatedOperator d = dilated_operator(h, r.t, eps, x0);
  r.perturbation_norm = r.t * cn;
  Mat A = d.matrix;
  A.diagonal().array() -= cplx(E, y);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  r.min_norm = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    Vec psi(A.cols());
    for (Index i = 0; i < psi.size(); ++i) psi(i) = cplx(nd(gen), nd(gen));
    psi.normalize();
    r.min_norm = std::min(r.min_norm, (A * psi).norm());
  }
  r.holds = r.min_norm >= 0.5 * std::abs(y);
  return r;
}

// ---------------------------------------------------------------------------
// Birman-Solomyak: ||M_f g(-i grad)||_p <= L^{-d/p} ||f||_p (sum_k |g(p_k)|^p)^{1/p}

struct BsCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

using FrequencyFunction = std::function<cplx(const Point&)>;

// Position-space matrix of g(-i grad) on the scalar torus grid.
inline Mat fourier_multiplier(const Grid& g, const FrequencyFunction& gfun) {
  const Index sites = g.sites();
  const int N = g.points();
  const int d = g.dim();
  // symbol values on the frequency lattice, indexed like sites (DFT order per coordinate)
  std::vector<cplx> gk(static_cast<std::size_t>(sites));
  for (Index k = 0; k < sites; ++k) {
    const Coords m = g.coords(k);
    Point p{0, 0, 0};
    for (int j = 0; j < d; ++j) p[static_cast<std::size_t>(j)] = g.frequency(m[static_cast<std::size_t>(j)]);
    gk[static_cast<std::size_t>(k)] = gfun(p);
  }
  // circulant kernel c(m) = N^{-d} sum_k g_k exp(2 pi i k.m / N)
  std::vector<cplx> c(static_cast<std::size_t>(sites));
  for (Index s = 0; s < sites; ++s) {
    const Coords ms = g.coords(s);
    cplx acc = 0.0;
    for (Index k = 0; k < sites; ++k) {
      const Coords mk = g.coords(k);
      long phase = 0;
      for (int j = 0; j < d; ++j) {
        const int kj = mk[static_cast<std::size_t>(j)] < N / 2 ? mk[static_cast<std::size_t>(j)]
                                                                : mk[static_cast<std::size_t>(j)] - N;
        phase += static_cast<long>(kj) * ms[static_cast<std::size_t>(j)];
      }
      const double ph = 2.0 * kPi * static_cast<double>(((phase % N) + N) % N) / N;
      acc += gk[static_cast<std::size_t>(k)] * cplx(std::cos(ph), std::sin(ph));
    }
    c[static_cast<std::size_t>(s)] = acc / static_cast<double>(sites);
  }
  Mat G(sites, sites);
  for (Index a = 0; a < sites; ++a) {
    const Coords ca = g.coords(a);
    for (Index b = 0; b < sites; ++b) {
      const Coords cb = g.coords(b);
      Coords diff{0, 0, 0};
      for (int j = 0; j < d; ++j)
        diff[static_cast<std::size_t>(j)] = ca[static_cast<std::size_t>(j)] - cb[static_cast<std::size_t>(j)];
      G(a, b) = c[static_cast<std::size_t>(g.site(diff))];
    }
  }
  return G;
}

inline BsCheck birman_solomyak_check(const RVec& f, const FrequencyFunction& gfun, const Grid& grid, double p) {
  require(p >= 2.0, "birman_solomyak_check: requires p >= 2");
  validate(f.size() == grid.sites(), "birman_solomyak_check: f must have one value per grid site");
  const Mat G = fourier_multiplier(grid, gfun);
  const Mat A = f.cast<cplx>().asDiagonal() * G;
  BsCheck r;
  r.lhs = schatten_norm(A, p);
  double cell = 1.0;
  for (int j = 0; j < grid.dim(); ++j) cell *= grid.spacing();
  const double fnorm = std::pow(f.array().abs().pow(p).sum() * cell, 1.0 / p);
  double gsum = 0.0;
  for (Index k = 0; k < grid.sites(); ++k) {
    const Coords m = grid.coords(k);
    Point q{0, 0, 0};
    for (int j = 0; j < grid.dim(); ++j) q[static_cast<std::size_t>(j)] = grid.frequency(m[static_cast<std::size_t>(j)]);
    gsum += std::pow(std::abs(gfun(q)), p);
  }
  r.rhs = std::pow(grid.side(), -grid.dim() / p) * fnorm * std::pow(gsum, 1.0 / p);
  r.holds = r.lhs <= r.rhs * (1.0 + 1e-9);
  return r;
}

// ---------------------------------------------------------------------------
// ||R(E + iy) M_chi||_{2d} against (1/|y|) ||chi||_{L^{2d}}

struct SchattenBound {
  double lhs = 0.0;
  double reference = 0.0;
  double ratio = 0.0;
};

inline SchattenBound resolvent_schatten_bound(const DiscreteOperator& op, double E, double y, const IndicatorField& chi,
                                              int d, double E_max = 10.0) {
  require(std::abs(E) <= E_max, "resolvent_schatten_bound: |E| exceeds the configured cap");
  require(y != 0.0, "resolvent_schatten_bound: y must be nonzero");
  require(d >= 1, "resolvent_schatten_bound: d must be >= 1");
  SchattenBound r;
  if (chi.values().cwiseAbs().maxCoeff() == 0.0) return r;
  const Mat R = resolvent(op.matrix(), cplx(E, y));
  const auto cols = support_states(chi, op.fiber());
  Mat m(R.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    m.col(static_cast<Index>(j)) = R.col(cols[j]) * chi.value(cols[j] / op.fiber());
  r.lhs = schatten_norm(m, 2.0 * d);
  r.reference = chi.lp_norm(2.0 * d) / std::abs(y);
  r.ratio = r.lhs / r.reference;
  return r;
}

// ---------------------------------------------------------------------------
// Geometric resolvent equation
//   chi R'(E) = R(E) chi + R(E) [H', chi] R'(E)
// with R the resolvent of H^per_{w,L} zero-extended into the Lambda_{L'} grid.

struct GreOptions {
  int points_per_unit = 4;
  bool enforce_margin = true;
};

struct GreResult {
  double residual = 0.0;
  double margin = 0.0;           // sup-norm distance from supp(chi) to the boundary of Lambda_L
  double required_margin = 0.0;  // 2 + R + 2h
};

// Distance from the support of the cutoff to the boundary of the half-open box Lambda_L.
inline double cutoff_margin(const IndicatorField& chi, double L) {
  const Grid& g = chi.grid();
  double m = std::numeric_limits<double>::infinity();
  for (Index s = 0; s < g.sites(); ++s) {
    if (chi.value(s) == 0.0) continue;
    const Point x = g.point(s);
    for (int j = 0; j < g.dim(); ++j) {
      const double v = x[static_cast<std::size_t>(j)];
      m = std::min({m, v + 0.5 * L, 0.5 * L - v});
    }
  }
  return m;
}

inline GreResult gre_residual(const Model& model, const DisorderRealization& omega, double L, double Lp,
                              const IndicatorField& cutoff, cplx E, const GreOptions& opt = {}) {
  const int c = opt.points_per_unit;
  validate(std::abs(L - std::round(L)) < 1e-12 && std::abs(Lp - std::round(Lp)) < 1e-12,
           "gre_residual: L and L' must be integers");
  require(L <= Lp, "gre_residual: need L <= L'");
  require(static_cast<long>(std::lround(Lp - L)) * c % 2 == 0, "gre_residual: (L' - L) * points_per_unit must be even");
  require(omega.box_side() >= Lp - 1e-12, "gre_residual: the realization must cover Lambda_{L'}");
  const Grid gp = Grid::lattice(model.dim(), static_cast<int>(std::lround(Lp)), c);
  require(cutoff.grid() == gp, "gre_residual: the cutoff must live on the Lambda_{L'} grid");

  GreResult res;
  res.margin = cutoff_margin(cutoff, L);
  res.required_margin = 2.0 + model.disorder.radius() + 2.0 * gp.spacing();
  if (opt.enforce_margin && cutoff.values().cwiseAbs().maxCoeff() > 0.0 && res.margin < res.required_margin)
    throw PreconditionError("gre_residual: cutoff margin " + std::to_string(res.margin) +
                            " to the boundary of Lambda_L is below the required " +
                            std::to_string(res.required_margin));

  const Backend fd = Backend::finite_difference;
  const DiscreteOperator Hp =
      build_periodic_restriction(model.symbol, model.background, model.disorder, omega, Lp, c, fd);
  const DiscreteOperator H = build_periodic_restriction(model.symbol, model.background, model.disorder, omega, L, c, fd);
  const int n = model.fiber();
  const Grid& g = H.grid();

  // state index map Lambda_L grid -> Lambda_{L'} grid
  const int offset = static_cast<int>(std::lround((Lp - L) * c / 2.0));
  std::vector<Index> embed(static_cast<std::size_t>(H.dimension()));
  for (Index s = 0; s < g.sites(); ++s) {
    Coords cs = g.coords(s);
    for (int j = 0; j < g.dim(); ++j) cs[static_cast<std::size_t>(j)] += offset;
    const Index sp = gp.site(cs);
    for (int a = 0; a < n; ++a) embed[static_cast<std::size_t>(s * n + a)] = sp * n + a;
  }

  const Mat Rp = resolvent(Hp, E);
  const Mat R = resolvent(H, E);
  Mat Rext = Mat::Zero(Hp.dimension(), Hp.dimension());
  for (std::size_t i = 0; i < embed.size(); ++i)
    for (std::size_t j = 0; j < embed.size(); ++j)
      Rext(embed[i], embed[j]) = R(static_cast<Index>(i), static_cast<Index>(j));

  const Mat M = cutoff.multiplication(n);
  const Mat lhs = M * Rp;
  const Mat rhs = Rext * M + Rext * commutator_with_cutoff(Hp, cutoff) * Rp;
  res.residual = operator_norm(lhs - rhs);
  return res;
}

}  // namespace diracdos
