#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "diracdos/cli/config.hpp"
#include "diracdos/cli/manifest.hpp"
#include "diracdos/cli/plotdata.hpp"
#include "diracdos/cli/thread_pool.hpp"
#include "diracdos/dos.hpp"
#include "diracdos/estimates.hpp"
#include "diracdos/hs_calculus.hpp"

namespace diracdos::cli {

inline constexpr const char* kToolVersion = "1.0.0";

struct RunOutput {
  std::vector<CsvTable> tables;
  json summary;  // kind-specific results; the runner adds kind and digests
};

inline std::string config_digest(const ExperimentConfig& c) { return sha256_hex(c.canonical.dump()); }

namespace detail {

inline double ratio_spread(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  if (*mx == 0.0) return 0.0;
  return *mn > 0.0 ? *mx / *mn : std::numeric_limits<double>::infinity();
}

// json cannot hold inf/nan; they are reported as null.
inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline Mat random_hermitian(Index n, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(lo, hi);
  Mat a(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) a(i, j) = cplx(g(gen), g(gen));
  const Mat q = Eigen::HouseholderQR<Mat>(a).householderQ();
  RVec ev(n);
  for (Index i = 0; i < n; ++i) ev(i) = u(gen);
  const Mat h = q * ev.cast<cplx>().asDiagonal() * q.adjoint();
  return 0.5 * (h + h.adjoint());
}

inline RunOutput run_spectrum(const ExperimentConfig& c, const Model& m) {
  const auto& q = c.spectrum;
  const int points = q.points == 0 ? q.L * c.points_per_unit : q.points;
  const Grid g(m.dim(), static_cast<double>(q.L), points);
  require(static_cast<Index>(m.fiber()) * g.sites() <= kMaxDimension,
          "spectrum: matrix dimension exceeds the dense cap of " + std::to_string(kMaxDimension));
  const bool disordered = q.disorder && m.disorder.single_site().amplitude() != 0.0;
  std::uint64_t rs = realization_seed(c.seed, q.realization);
  const DiscreteOperator h =
      disordered ? build_H_omega(m.symbol, m.background, m.disorder, sample_realization(m.disorder, q.L, rs), g, c.backend)
                 : build_H0(m.symbol, g, m.background, c.backend);
  const RVec ev = eigenvalues_hermitian(h.matrix());
  CsvTable t("eigenvalues.csv", {"index", "eigenvalue"});
  for (Index k = 0; k < ev.size(); ++k) t.row(static_cast<std::int64_t>(k), ev(k));
  constexpr double edge = kGapEdgeTolerance;
  long in_gap = 0;
  for (Index k = 0; k < ev.size(); ++k) in_gap += (ev(k) > m.gap_lower + edge && ev(k) < m.gap_upper - edge) ? 1 : 0;
  RunOutput out;
  out.tables.push_back(std::move(t));
  out.summary = {{"dimension", ev.size()},
                 {"disordered", disordered},
                 {"realization_seed", disordered ? json(rs) : json(nullptr)},
                 {"min", ev.minCoeff()},
                 {"max", ev.maxCoeff()},
                 {"eigenvalues_in_gap", in_gap}};
  return out;
}

inline RunOutput run_dos(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.dos;
  DosOptions opt;
  opt.points_per_unit = c.points_per_unit;
  opt.backend = c.backend;
  opt.bins = q.bins;
  RunOutput out;
  json meta = {{"model_sha256", sha256_hex(c.canonical.at("model").dump())},
               {"base_seed", c.seed},
               {"realizations", c.realizations},
               {"L", q.L},
               {"construction", q.construction}};
  if (q.construction != "periodic") {
    const auto e = dos_spatial(m, q.lower, q.upper, q.L, q.ambient_L, c.realizations, c.seed, opt, exec);
    out.tables.push_back(dos_table("dos_spatial.csv", e));
    meta["ambient_L"] = e.ambient_side;
    if (!q.phi.empty()) {
      const auto s = dos_spatial_smooth(m, SmoothBump::bump(q.phi[0], q.phi[1]), q.L, q.ambient_L, c.realizations,
                                        c.seed, opt, exec);
      CsvTable t("dos_smooth.csv", {"phi_lo", "phi_hi", "mean", "stderr"});
      t.row(q.phi[0], q.phi[1], s.mean[0], s.stderr_[0]);
      out.tables.push_back(std::move(t));
    }
  }
  if (q.construction != "spatial") {
    const auto e = dos_periodic(m, q.lower, q.upper, q.L, c.realizations, c.seed, opt, exec);
    out.tables.push_back(dos_table("dos_periodic.csv", e));
  }
  out.summary = meta;
  return out;
}

inline RunOutput run_wegner(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.wegner;
  WegnerOptions opt;
  opt.points_per_unit = c.points_per_unit;
  opt.backend = c.backend;
  opt.padded_torus = q.padded_torus;
  opt.pad = q.pad;
  const auto rep = wegner_scan(m, q.J_lower, q.J_upper, q.widths, q.Ls, c.realizations, c.seed, opt, exec);
  RunOutput out;
  out.tables.push_back(wegner_table(rep));
  out.tables.push_back(wegner_cells_table(rep, c.seed));
  json per_L = json::array();
  for (std::size_t i = 0; i < rep.Ls.size(); ++i) {
    std::vector<double> ratios;
    for (const auto& cell : rep.cells)
      if (cell.L == rep.Ls[i]) ratios.push_back(cell.ratio);
    per_L.push_back({{"L", rep.Ls[i]}, {"C_J", num(rep.C_J_per_L[i])}, {"width_spread", num(ratio_spread(ratios))}});
  }
  out.summary = {{"C_J", num(rep.C_J)}, {"C_J_spread_across_L", num(ratio_spread(rep.C_J_per_L))}, {"per_L", per_L}};
  return out;
}

inline RunOutput run_ct(const ExperimentConfig& c, const Model& m) {
  const auto& q = c.ct;
  const Grid g = Grid::lattice(m.dim(), q.side, c.points_per_unit);
  require(static_cast<Index>(m.fiber()) * g.sites() <= kMaxDimension, "ct: torus too large for dense evaluation");
  const auto omega = sample_realization(m.disorder, q.side, realization_seed(c.seed, 0));
  const DiscreteOperator op = build_H_omega(m.symbol, m.background, m.disorder, omega, g, c.backend);
  const CtGeometry geom{Point{0, 0, 0}, q.half_width, q.distances};
  const CtOptions opt{q.min_distance, q.E_max, q.Y_max};
  const DecayFit fit = combes_thomas_scan(op, q.E, q.ys, geom, opt);
  const double cfit = fitted_ct_constant(fit);

  RunOutput out;
  out.tables.push_back(ct_decay_table(fit));
  out.tables.push_back(ct_fit_table(fit));
  CsvTable bound("ct_bound.csv", {"y", "a", "measured", "bound", "holds"});
  const auto chi1 = IndicatorField::box(g, geom.center, q.half_width);
  bool all_hold = true;
  if (std::isfinite(cfit) && cfit > 0.0)
    for (double a : q.bound_distances) {
      const auto chk =
          operator_norm_ct_bound(op, q.E, q.bound_y, chi1, IndicatorField::exterior(g, geom.center, q.half_width, a), cfit);
      bound.row(q.bound_y, a, chk.measured, chk.bound, chk.holds);
      all_hold = all_hold && chk.holds;
    }
  out.tables.push_back(std::move(bound));
  json lines = json::array();
  for (std::size_t k = 0; k < fit.lines.size(); ++k) {
    json l = {{"y", fit.lines[k].y}, {"slope", fit.lines[k].slope}, {"r_squared", fit.lines[k].r_squared}};
    if (k > 0) l["slope_ratio_to_previous"] = num(fit.lines[k].slope / fit.lines[k - 1].slope);
    lines.push_back(l);
  }
  out.summary = {{"E", q.E}, {"realization_seed", realization_seed(c.seed, 0)}, {"fitted_constant", num(cfit)},
                 {"lines", lines}, {"bound_holds", all_hold}};
  return out;
}

inline RunOutput run_bs(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.bs;
  const Grid g = Grid::lattice(m.dim(), q.L, c.points_per_unit);
  require(g.sites() <= kMaxDimension, "bs: grid too large for dense evaluation");
  const int d = m.dim();
  const std::size_t n = static_cast<std::size_t>(q.instances);
  std::vector<std::vector<BsCheck>> res(n);
  exec(n, [&](std::size_t i) {
    std::mt19937_64 gen(realization_seed(c.seed, i));
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.5, 3.0);
    RVec f(g.sites());
    for (Index s = 0; s < f.size(); ++s) f(s) = nd(gen);
    const double decay = ud(gen), shift = nd(gen), phase = nd(gen);
    const FrequencyFunction gf = [=](const Point& p) {
      double n2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double t = p[static_cast<std::size_t>(j)] - shift;
        n2 += t * t;
      }
      return cplx(std::exp(-decay * std::sqrt(n2)), 0.3 * std::cos(p[0] + phase));
    };
    std::vector<BsCheck> row;
    row.push_back(birman_solomyak_check(f, gf, g, 2.0));
    for (double p : q.ps)
      if (p != 2.0) row.push_back(birman_solomyak_check(f, gf, g, p));
    res[i] = std::move(row);
  });
  CsvTable t("bs.csv", {"instance", "p", "lhs", "rhs", "relative_gap", "holds"});
  double worst_equality = 0.0;
  bool strict = true;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    auto emit = [&](double p, const BsCheck& r) {
      t.row(static_cast<std::int64_t>(i), p, r.lhs, r.rhs, (r.rhs - r.lhs) / r.rhs, r.holds);
    };
    emit(2.0, res[i][k]);
    worst_equality = std::max(worst_equality, std::abs(res[i][k].lhs - res[i][k].rhs) / res[i][k].rhs);
    ++k;
    for (double p : q.ps) {
      if (p == 2.0) continue;
      emit(p, res[i][k]);
      strict = strict && res[i][k].lhs < res[i][k].rhs;
      ++k;
    }
  }
  RunOutput out;
  out.tables.push_back(std::move(t));
  out.summary = {{"max_relative_p2_deviation", worst_equality}, {"strict_for_p_above_2", strict}};
  return out;
}

inline IndicatorField gre_cutoff(const Grid& gp, double L, double margin, double ramp) {
  const double outer = 0.5 * L - margin;
  require(outer > ramp, "gre: margin and ramp leave no room for the cutoff inside Lambda_L");
  return IndicatorField::smooth_box(gp, Point{0, 0, 0}, outer - ramp, outer);
}

inline RunOutput run_gre(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.gre;
  const Grid gp = Grid::lattice(m.dim(), q.Lp, c.points_per_unit);
  require(static_cast<Index>(m.fiber()) * gp.sites() <= kMaxDimension, "gre: Lambda_L' too large for dense evaluation");
  const auto good = gre_cutoff(gp, q.L, q.margin, q.ramp);
  const bool control = q.negative_margin > 0.0;
  const auto bad = control ? gre_cutoff(gp, q.L, q.negative_margin, q.ramp) : good;
  const std::size_t n = static_cast<std::size_t>(q.instances);
  std::vector<GreResult> ok(n), viol(n);
  GreOptions strict{c.points_per_unit, true}, loose{c.points_per_unit, false};
  const cplx E(q.E_re, q.E_im);
  exec(n, [&](std::size_t i) {
    const auto omega = sample_realization(m.disorder, q.Lp, realization_seed(c.seed, i));
    ok[i] = gre_residual(m, omega, q.L, q.Lp, good, E, strict);
    if (control) viol[i] = gre_residual(m, omega, q.L, q.Lp, bad, E, loose);
  });
  CsvTable t("gre.csv", {"instance", "realization_seed", "cutoff", "margin", "required_margin", "residual"});
  double max_ok = 0.0, min_bad = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    t.row(static_cast<std::int64_t>(i), realization_seed(c.seed, i), "compliant", ok[i].margin, ok[i].required_margin,
          ok[i].residual);
    max_ok = std::max(max_ok, ok[i].residual);
    if (control) {
      t.row(static_cast<std::int64_t>(i), realization_seed(c.seed, i), "violating", viol[i].margin,
            viol[i].required_margin, viol[i].residual);
      min_bad = std::min(min_bad, viol[i].residual);
    }
  }
  RunOutput out;
  out.tables.push_back(std::move(t));
  out.summary = {{"max_compliant_residual", max_ok}, {"min_violating_residual", control ? num(min_bad) : json(nullptr)}};
  return out;
}

inline RunOutput run_hs_check(const ExperimentConfig& c, const ParallelFor& exec) {
  const auto& q = c.hs;
  HsQuadrature quad;
  quad.tolerance = q.tolerance;
  quad.max_nodes = q.max_nodes;
  quad.y_min_factor = q.y_min_factor;
  std::vector<SmoothBump> bumps;
  std::vector<AlmostAnalyticExtension> exts;
  std::vector<HsPlan> plans;
  for (const auto& [s0, s1] : q.bumps) {
    bumps.push_back(SmoothBump::bump(s0, s1, static_cast<std::size_t>(std::max(12, q.order + 2))));
    exts.push_back(build_extension(bumps.back(), q.order, q.delta));
    plans.push_back(hs_plan(exts.back(), q.spectrum_lower, q.spectrum_upper, quad));
  }
  const std::size_t nb = bumps.size(), ni = static_cast<std::size_t>(q.instances);
  struct Cell {
    double error = 0.0, hermiticity = 0.0;
  };
  std::vector<Cell> cells(ni * nb);
  exec(ni, [&](std::size_t i) {
    const Mat h = random_hermitian(q.dimension, realization_seed(c.seed, i), q.spectrum_lower, q.spectrum_upper);
    const SpectralData spec = eigen_hermitian(h);
    for (std::size_t b = 0; b < nb; ++b) {
      const Mat x = hs_apply(h, plans[b]).matrix;
      const Mat ref = apply_function_eigen(spec, [&](double t) { return bumps[b](t); });
      cells[i * nb + b] = Cell{operator_norm(x - ref), max_abs(x - x.adjoint())};
    }
  });
  CsvTable t("hs_check.csv", {"instance", "bump_lo", "bump_hi", "dimension", "error", "hermiticity_defect", "nodes"});
  double worst = 0.0;
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t b = 0; b < nb; ++b) {
      const Cell& cell = cells[i * nb + b];
      t.row(static_cast<std::int64_t>(i), bumps[b].lower(), bumps[b].upper(), q.dimension, cell.error, cell.hermiticity,
            static_cast<std::uint64_t>(plans[b].nodes.size()));
      worst = std::max(worst, cell.error);
    }
  CsvTable decay("hs_decay.csv", {"bump_lo", "bump_hi", "order", "slope", "r_squared"});
  double min_slope = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < nb; ++b) {
    const auto fit = fit_dbar_decay(exts[b]);
    decay.row(bumps[b].lower(), bumps[b].upper(), q.order, fit.slope, fit.r_squared);
    min_slope = std::min(min_slope, fit.slope);
  }
  json conv = json::array();
  for (const auto& p : plans) conv.push_back({{"nodes", p.nodes.size()}, {"converged", p.converged},
                                              {"error_estimate", p.error_estimate}});
  RunOutput out;
  out.tables.push_back(std::move(t));
  out.tables.push_back(std::move(decay));
  out.summary = {{"max_error", worst}, {"min_decay_slope", num(min_slope)}, {"order", q.order}, {"plans", conv}};
  return out;
}

inline RunOutput run_equivalence(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.equivalence;
  DosOptions opt;
  opt.points_per_unit = c.points_per_unit;
  opt.backend = c.backend;
  const auto st = equivalence_study(m, q.Ls, q.lower, q.upper, c.realizations, c.seed, q.offset, opt, exec);
  RunOutput out;
  out.tables.push_back(equivalence_table(st));
  out.summary = {{"decreasing", st.decreasing}, {"monotone", st.monotone}};
  if (!q.replacement_bump.empty()) {
    const SmoothBump phi = SmoothBump::bump(q.replacement_bump[0], q.replacement_bump[1]);
    const std::size_t nL = q.Ls.size(), n = c.realizations;
    std::vector<double> values(nL * n);
    exec(nL * n, [&](std::size_t k) {
      FiniteVolumeOptions fo;
      fo.L = q.Ls[k / n];
      fo.pad = q.replacement_pad;
      fo.points_per_unit = c.points_per_unit;
      fo.backend = c.backend;
      values[k] = finite_volume_replacement(m, phi, fo, realization_seed(c.seed, k % n)).value;
    });
    CsvTable t("finite_volume.csv", {"L", "mean", "stderr"});
    std::vector<double> means;
    for (std::size_t i = 0; i < nL; ++i) {
      const auto s = sample_stats(std::vector<double>(values.begin() + static_cast<long>(i * n),
                                                      values.begin() + static_cast<long>((i + 1) * n)));
      t.row(q.Ls[i], s.mean, s.stderr_);
      means.push_back(s.mean);
    }
    out.tables.push_back(std::move(t));
    out.summary["finite_volume_decreasing"] = means.back() < means.front();
  }
  return out;
}

inline RunOutput run_self_averaging(const ExperimentConfig& c, const Model& m, const ParallelFor& exec) {
  const auto& q = c.self_averaging;
  DosOptions opt;
  opt.points_per_unit = c.points_per_unit;
  opt.backend = c.backend;
  const auto rep = self_averaging(m, SmoothBump::bump(q.s0, q.s1), q.Ls, c.realizations, c.seed, opt, exec);
  RunOutput out;
  out.tables.push_back(self_averaging_table(rep));
  out.summary = {{"strictly_decreasing", rep.strictly_decreasing}};
  return out;
}

}  // namespace detail

// Pure experiment evaluation: no filesystem access.
inline RunOutput execute(const ExperimentConfig& c, const ParallelFor& exec) {
  const Model m = build_model(c.model);
  if (c.kind == "spectrum") return detail::run_spectrum(c, m);
  if (c.kind == "dos") return detail::run_dos(c, m, exec);
  if (c.kind == "wegner") return detail::run_wegner(c, m, exec);
  if (c.kind == "ct") return detail::run_ct(c, m);
  if (c.kind == "bs") return detail::run_bs(c, m, exec);
  if (c.kind == "gre") return detail::run_gre(c, m, exec);
  if (c.kind == "hs-check") return detail::run_hs_check(c, exec);
  if (c.kind == "equivalence") return detail::run_equivalence(c, m, exec);
  if (c.kind == "self-averaging") return detail::run_self_averaging(c, m, exec);
  throw ValidationError("unknown experiment kind '" + c.kind + "'");
}

// Runs the experiment and writes the CSV tables, summary.json and manifest.json into `dir`.
inline RunManifest run_and_write(const ExperimentConfig& c, const std::filesystem::path& dir, std::size_t jobs) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto started = std::chrono::system_clock::now();
  const RunOutput out = execute(c, thread_pool(jobs));

  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());

  RunManifest man;
  man.config = c.canonical;
  man.config_sha256 = config_digest(c);
  man.tool_version = kToolVersion;
  man.started_utc = utc_timestamp(started);
  man.jobs = jobs;
  auto emit = [&](const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    man.files.push_back({name, bytes.size(), sha256_hex(bytes)});
  };
  json tables = json::array();
  for (const auto& t : out.tables) {
    emit(t.name(), t.render(man.config_sha256));
    tables.push_back({{"file", t.name()}, {"columns", t.columns()}, {"rows", t.size()}});
  }
  json summary = {{"kind", c.kind}, {"config_sha256", man.config_sha256}, {"seed", c.seed},
                  {"results", out.summary}, {"tables", tables}};
  emit("summary.json", summary.dump(2) + "\n");
  man.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "manifest.json", man.to_json().dump(2) + "\n");
  return man;
}

}  // namespace diracdos::cli
