#pragma once

// Density of states: nu_{w,L}(phi) = L^{-d} tr(chi_L phi(H_w) chi_L) on an ambient torus,
// and the periodic construction L^{-d} tr(phi(H^per_{w,L})).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "diracdos/common.hpp"
#include "diracdos/disorder.hpp"
#include "diracdos/estimates.hpp"
#include "diracdos/hs_calculus.hpp"
#include "diracdos/models.hpp"
#include "diracdos/spectral.hpp"

namespace diracdos {

struct DosOptions {
  int points_per_unit = 4;
  Backend backend = Backend::fourier_spectral;
  int bins = 1;
};

struct DOSEstimate {
  std::string construction;  // spatial | spatial_smooth | periodic
  double window_lower = 0.0, window_upper = 0.0;
  std::vector<double> edges;
  std::vector<double> mean;
  std::vector<double> stderr_;
  double L = 0.0;
  double ambient_side = 0.0;
  std::size_t n_realizations = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> samples;  // [bin][realization]

  double total_mean() const {
    double s = 0;
    for (double m : mean) s += m;
    return s;
  }
};

inline std::vector<double> bin_edges(double lo, double hi, int bins) {
  validate(lo < hi, "DOS window must satisfy lower < upper");
  validate(bins >= 1, "DOS window needs at least one bin");
  std::vector<double> e(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) e[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / bins;
  e.back() = hi;
  return e;
}

// Bin index of x for bins [e_i, e_{i+1}) (last bin closed) with the window tie tolerance
// at the two outer edges; -1 outside.
inline int bin_of(const std::vector<double>& edges, double x) {
  if (!in_window(x, edges.front(), edges.back())) return -1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), x);
  int b = static_cast<int>(it - edges.begin()) - 1;
  return std::clamp(b, 0, static_cast<int>(edges.size()) - 2);
}

inline void finalize_estimate(DOSEstimate& est) {
  est.mean.clear();
  est.stderr_.clear();
  for (const auto& s : est.samples) {
    const SampleStats st = sample_stats(s);
    est.mean.push_back(st.mean);
    est.stderr_.push_back(st.stderr_);
  }
}

inline double default_ambient(double L, double ambient) {
  const double amb = ambient > 0.0 ? ambient : L + 8.0;
  validate(std::abs(amb - std::round(amb)) < 1e-12, "ambient torus side must be an integer");
  require(amb >= L + 8.0 - 1e-12, "dos_spatial: ambient torus side must be >= L + 8");
  return amb;
}

// Per-eigenvector weight carried in chi_L: w_k = sum_{i in chi_L} |U_ik|^2.
inline RVec cutoff_weights(const SpectralData& spec, const IndicatorField& chi, int fiber) {
  RVec w = RVec::Zero(spec.eigenvalues.size());
  for (Index i = 0; i < spec.eigenvectors.rows(); ++i) {
    const double c = chi.value(i / fiber);
    if (c == 0.0) continue;
    w += (c * c) * spec.eigenvectors.row(i).cwiseAbs2().transpose();
  }
  return w;
}

struct SpatialSample {
  RVec eigenvalues;
  RVec weights;
};

inline SpatialSample spatial_sample(const Model& model, double L, double amb, std::uint64_t seed, const DosOptions& opt) {
  const Grid grid = Grid::lattice(model.dim(), static_cast<int>(std::lround(amb)), opt.points_per_unit);
  const DisorderRealization omega = sample_realization(model.disorder, amb, seed);
  const DiscreteOperator h = build_H_omega(model.symbol, model.background, model.disorder, omega, grid, opt.backend);
  const SpectralData spec = eigen_hermitian(h);
  const IndicatorField chi = IndicatorField::centered_box(grid, L);
  return {spec.eigenvalues, cutoff_weights(spec, chi, model.fiber())};
}

// Sharp-window spatial estimate over bins of [lo, hi].
inline DOSEstimate dos_spatial(const Model& model, double lo, double hi, double L, double ambient_L,
                               std::size_t n_realizations, std::uint64_t seed, const DosOptions& opt = {},
                               ParallelFor executor = default_executor()) {
  validate(n_realizations >= 1 && L > 0.0, "dos_spatial: need L > 0 and at least one realization");
  DOSEstimate est;
  est.construction = "spatial";
  est.window_lower = lo;
  est.window_upper = hi;
  est.edges = bin_edges(lo, hi, opt.bins);
  est.L = L;
  est.ambient_side = default_ambient(L, ambient_L);
  est.n_realizations = n_realizations;
  est.seed = seed;
  est.samples.assign(static_cast<std::size_t>(opt.bins), std::vector<double>(n_realizations, 0.0));
  const double vol = std::pow(L, model.dim());
  executor(n_realizations, [&](std::size_t r) {
    const SpatialSample s = spatial_sample(model, L, est.ambient_side, realization_seed(seed, r), opt);
    std::vector<double> acc(static_cast<std::size_t>(opt.bins), 0.0);
    for (Index k = 0; k < s.eigenvalues.size(); ++k) {
      const int b = bin_of(est.edges, s.eigenvalues(k));
      if (b >= 0) acc[static_cast<std::size_t>(b)] += s.weights(k);
    }
    for (int b = 0; b < opt.bins; ++b) est.samples[static_cast<std::size_t>(b)][r] = acc[static_cast<std::size_t>(b)] / vol;
  });
  finalize_estimate(est);
  return est;
}

// Smooth spatial estimate nu_{w,L}(phi), one bin spanning supp(phi).
inline DOSEstimate dos_spatial_smooth(const Model& model, const SmoothBump& phi, double L, double ambient_L,
                                      std::size_t n_realizations, std::uint64_t seed, const DosOptions& opt = {},
                                      ParallelFor executor = default_executor()) {
  validate(n_realizations >= 1 && L > 0.0, "dos_spatial_smooth: need L > 0 and at least one realization");
  DOSEstimate est;
  est.construction = "spatial_smooth";
  est.window_lower = phi.lower();
  est.window_upper = phi.upper();
  est.edges = {phi.lower(), phi.upper()};
  est.L = L;
  est.ambient_side = default_ambient(L, ambient_L);
  est.n_realizations = n_realizations;
  est.seed = seed;
  est.samples.assign(1, std::vector<double>(n_realizations, 0.0));
  const double vol = std::pow(L, model.dim());
  executor(n_realizations, [&](std::size_t r) {
    const SpatialSample s = spatial_sample(model, L, est.ambient_side, realization_seed(seed, r), opt);
    double acc = 0.0;
    for (Index k = 0; k < s.eigenvalues.size(); ++k) acc += phi(s.eigenvalues(k)) * s.weights(k);
    est.samples[0][r] = acc / vol;
  });
  finalize_estimate(est);
  return est;
}

// Eigenvalue counts of H^per_{w,L} per bin, divided by `normalization` (L^d by default).
inline DOSEstimate dos_periodic(const Model& model, double lo, double hi, double L, std::size_t n_realizations,
                                std::uint64_t seed, const DosOptions& opt = {}, ParallelFor executor = default_executor(),
                                double normalization = 0.0) {
  validate(n_realizations >= 1, "dos_periodic: need at least one realization");
  validate(std::abs(L - std::round(L)) < 1e-12 && L >= 1.0, "dos_periodic: L must be a positive integer");
  DOSEstimate est;
  est.construction = "periodic";
  est.window_lower = lo;
  est.window_upper = hi;
  est.edges = bin_edges(lo, hi, opt.bins);
  est.L = L;
  est.ambient_side = L;
  est.n_realizations = n_realizations;
  est.seed = seed;
  est.samples.assign(static_cast<std::size_t>(opt.bins), std::vector<double>(n_realizations, 0.0));
  const double vol = normalization > 0.0 ? normalization : std::pow(L, model.dim());
  executor(n_realizations, [&](std::size_t r) {
    const DisorderRealization omega = sample_realization(model.disorder, L, realization_seed(seed, r));
    const DiscreteOperator h = build_periodic_restriction(model.symbol, model.background, model.disorder, omega, L,
                                                          opt.points_per_unit, opt.backend);
    const RVec ev = eigenvalues_hermitian(h.matrix());
    std::vector<double> acc(static_cast<std::size_t>(opt.bins), 0.0);
    for (Index k = 0; k < ev.size(); ++k) {
      const int b = bin_of(est.edges, ev(k));
      if (b >= 0) acc[static_cast<std::size_t>(b)] += 1.0;
    }
    for (int b = 0; b < opt.bins; ++b) est.samples[static_cast<std::size_t>(b)][r] = acc[static_cast<std::size_t>(b)] / vol;
  });
  finalize_estimate(est);
  return est;
}

// ---------------------------------------------------------------------------

struct EquivalenceRow {
  double L = 0.0;
  double spatial_mean = 0.0, spatial_stderr = 0.0;
  double periodic_mean = 0.0, periodic_stderr = 0.0;  // dos_periodic(L + offset), own-volume normalization
  double difference = 0.0;            // |nu_spatial(L) - L^{-d} tr 1_J(H^per_{L+offset})|
  double difference_stderr = 0.0;     // from the paired per-realization differences
  double own_volume_difference = 0.0; // |nu_spatial(L) - dos_periodic(L + offset)|
};

struct EquivalenceStudy {
  double window_lower = 0.0, window_upper = 0.0;
  double offset = 10.0;
  std::vector<EquivalenceRow> rows;
  bool decreasing = false;  // difference(L_last) <= difference(L_first)
  bool monotone = false;    // each step decreasing up to 2 combined standard errors
};

inline EquivalenceStudy equivalence_study(const Model& model, const std::vector<double>& Ls, double lo, double hi,
                                          std::size_t n_realizations, std::uint64_t seed, double offset = 10.0,
                                          const DosOptions& opt = {}, ParallelFor executor = default_executor()) {
  validate(!Ls.empty(), "equivalence_study: need at least one L");
  for (std::size_t i = 1; i < Ls.size(); ++i) validate(Ls[i] > Ls[i - 1], "equivalence_study: Ls must increase");
  DosOptions one = opt;
  one.bins = 1;
  EquivalenceStudy st;
  st.window_lower = lo;
  st.window_upper = hi;
  st.offset = offset;
  for (double L : Ls) {
    const DOSEstimate sp = dos_spatial(model, lo, hi, L, 0.0, n_realizations, seed, one, executor);
    const DOSEstimate pe = dos_periodic(model, lo, hi, L + offset, n_realizations, seed, one, executor);
    const double scale = std::pow((L + offset) / L, model.dim());
    std::vector<double> diff(n_realizations);
    for (std::size_t r = 0; r < n_realizations; ++r) diff[r] = sp.samples[0][r] - pe.samples[0][r] * scale;
    const SampleStats ds = sample_stats(diff);
    EquivalenceRow row;
    row.L = L;
    row.spatial_mean = sp.mean[0];
    row.spatial_stderr = sp.stderr_[0];
    row.periodic_mean = pe.mean[0];
    row.periodic_stderr = pe.stderr_[0];
    row.difference = std::abs(ds.mean);
    row.difference_stderr = ds.stderr_;
    row.own_volume_difference = std::abs(sp.mean[0] - pe.mean[0]);
    st.rows.push_back(row);
  }
  st.decreasing = st.rows.back().difference <= st.rows.front().difference;
  st.monotone = true;
  for (std::size_t i = 1; i < st.rows.size(); ++i) {
    const double tol = 2.0 * std::hypot(st.rows[i].difference_stderr, st.rows[i - 1].difference_stderr);
    if (st.rows[i].difference > st.rows[i - 1].difference + tol) st.monotone = false;
  }
  return st;
}

// ---------------------------------------------------------------------------

struct LipschitzReport {
  double J_lower = 0.0, J_upper = 0.0;
  double L = 0.0;
  std::vector<double> widths;
  std::vector<double> nu;      // nu([a, b]) estimates
  std::vector<double> stderr_;
  std::vector<double> ratios;  // nu / (b - a)
  double C_J = 0.0;
  double spread = 0.0;  // max ratio / min ratio (infinite when some ratio is 0 and another is not)
};

inline LipschitzReport lipschitz_check(const Model& model, double J_lower, double J_upper,
                                       const std::vector<double>& widths, double L, std::size_t n_realizations,
                                       std::uint64_t seed, const WegnerOptions& opt = {},
                                       ParallelFor executor = default_executor()) {
  const WegnerReport w = wegner_scan(model, J_lower, J_upper, widths, {L}, n_realizations, seed, opt, executor);
  LipschitzReport r;
  r.J_lower = J_lower;
  r.J_upper = J_upper;
  r.L = L;
  r.widths = widths;
  const double vol = std::pow(L, model.dim());
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const WegnerCell& c : w.cells) {
    r.nu.push_back(c.mean_count / vol);
    r.stderr_.push_back(c.stderr_ / vol);
    r.ratios.push_back(c.ratio);
    lo = std::min(lo, c.ratio);
    hi = std::max(hi, c.ratio);
  }
  r.C_J = hi;
  r.spread = hi == 0.0 ? 1.0 : (lo == 0.0 ? std::numeric_limits<double>::infinity() : hi / lo);
  return r;
}

// ---------------------------------------------------------------------------

struct SelfAveragingRow {
  double L = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

struct SelfAveragingReport {
  std::vector<SelfAveragingRow> rows;
  bool strictly_decreasing = false;
};

inline SelfAveragingReport self_averaging(const Model& model, const SmoothBump& phi, const std::vector<double>& Ls,
                                          std::size_t n_realizations, std::uint64_t seed, const DosOptions& opt = {},
                                          ParallelFor executor = default_executor()) {
  validate(n_realizations >= 2, "self_averaging: need at least two realizations");
  SelfAveragingReport rep;
  for (double L : Ls) {
    const DOSEstimate e = dos_spatial_smooth(model, phi, L, 0.0, n_realizations, seed, opt, executor);
    const SampleStats st = sample_stats(e.samples[0]);
    rep.rows.push_back({L, st.mean, st.variance});
  }
  rep.strictly_decreasing = true;
  for (std::size_t i = 1; i < rep.rows.size(); ++i)
    if (!(rep.rows[i].variance < rep.rows[i - 1].variance)) rep.strictly_decreasing = false;
  return rep;
}

}  // namespace diracdos
