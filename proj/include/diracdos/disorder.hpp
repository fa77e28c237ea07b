#pragma once

// Anderson-type disorder: V(x) = sum_i lambda_i u(x - xi_i - i) over lattice sites i.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diracdos/common.hpp"
#include "diracdos/operator_core.hpp"

namespace diracdos {

// ---------------------------------------------------------------------------
// Counter-based random numbers. Every variable is addressed by (seed, lattice index,
// tag, draw counter), so the value attached to impurity i never depends on the box.

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum class RngTag : std::uint64_t { coupling = 1, displacement = 2 };

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, const Coords& index, int d, RngTag tag) {
    std::uint64_t h = splitmix64(seed ^ 0xD1B54A32D192ED03ull);
    for (int j = 0; j < d; ++j)
      h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(index[static_cast<std::size_t>(j)])));
    key_ = splitmix64(h ^ (static_cast<std::uint64_t>(tag) * 0xA24BAED4963EE407ull));
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  std::uint64_t draws() const { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Coupling law: an absolutely continuous density h supported on [-m, M].

class CouplingLaw {
 public:
  enum class Kind { uniform, truncated_triangular };

  static CouplingLaw uniform(double m, double M) { return CouplingLaw(Kind::uniform, m, M, 0.0, 0.0); }

  // Triangle density centred at `mode` with half-width `spread`, restricted to [-m, M]
  // and renormalized. The triangle must cover [-m, M] so that supp h is the whole interval.
  static CouplingLaw truncated_triangular(double m, double M, double mode, double spread) {
    return CouplingLaw(Kind::truncated_triangular, m, M, mode, spread);
  }

  Kind kind() const { return kind_; }
  double m() const { return m_; }
  double M() const { return M_; }
  double lower() const { return -m_; }
  double upper() const { return M_; }
  double mode() const { return mode_; }
  double spread() const { return spread_; }
  double bound() const { return std::max(m_, M_); }
  double density_sup() const { return density_sup_; }
  std::string kind_name() const { return kind_ == Kind::uniform ? "uniform" : "truncated_triangular"; }

  double density(double x) const {
    if (x < -m_ || x > M_) return 0.0;
    if (kind_ == Kind::uniform) return 1.0 / (m_ + M_);
    return triangle(x) / norm_;
  }

  double mean() const {
    if (kind_ == Kind::uniform) return 0.5 * (M_ - m_);
    return mean_;
  }

  double sample(CounterRng& rng) const {
    const double w = m_ + M_;
    if (kind_ == Kind::uniform) return -m_ + w * rng.uniform();
    const double peak = triangle(std::clamp(mode_, -m_, M_));
    while (true) {
      const double x = -m_ + w * rng.uniform();
      if (rng.uniform() * peak < triangle(x)) return x;
    }
  }

 private:
  CouplingLaw(Kind kind, double m, double M, double mode, double spread)
      : kind_(kind), m_(m), M_(M), mode_(mode), spread_(spread) {
    validate(std::isfinite(m) && std::isfinite(M) && m >= 0.0 && M >= 0.0,
             "coupling law: m and M must be finite and nonnegative");
    validate(m + M > 0.0, "degenerate coupling law: supp(h) = [-m, M] must not be {0}");
    if (kind_ == Kind::uniform) {
      density_sup_ = 1.0 / (m + M);
      return;
    }
    validate(spread > 0.0 && mode - spread < -m && mode + spread > M,
             "truncated triangular law: the triangle must strictly cover [-m, M]");
    // antiderivative of the triangle restricted to [-m, M]
    auto prim = [&](double x) {
      const double t = x - mode;
      return t <= 0.0 ? (t + spread) * (t + spread) / (2.0 * spread) - 0.5 * spread
                      : t - t * t / (2.0 * spread);
    };
    auto first = [&](double x) {  // int (x - mode) tri
      const double t = x - mode;
      return t <= 0.0 ? t * t / 2.0 + t * t * t / (3.0 * spread) : t * t / 2.0 - t * t * t / (3.0 * spread);
    };
    norm_ = prim(M) - prim(-m);
    mean_ = mode + (first(M) - first(-m)) / norm_;
    density_sup_ = triangle(std::clamp(mode, -m, M)) / norm_;
  }

  double triangle(double x) const { return std::max(0.0, 1.0 - std::abs(x - mode_) / spread_); }

  Kind kind_;
  double m_, M_, mode_, spread_;
  double norm_ = 1.0, mean_ = 0.0, density_sup_ = 0.0;
};

// ---------------------------------------------------------------------------
// Single-site potential u(x) = f(x) U: a scalar profile supported in [-2, 2]^d times a
// fixed positive semidefinite matrix.

class SingleSite {
 public:
  using Profile = std::function<double(const Point&, int)>;

  SingleSite(std::string name, Profile profile, Mat matrix, double amplitude)
      : name_(std::move(name)), profile_(std::move(profile)), matrix_(std::move(matrix)), amplitude_(amplitude) {
    validate(amplitude_ >= 0.0 && std::isfinite(amplitude_), "single-site potential: amplitude must be >= 0");
    validate(matrix_.rows() == matrix_.cols() && matrix_.rows() >= 1, "single-site potential: matrix must be square");
    validate(max_abs(matrix_ - matrix_.adjoint()) <= 1e-12, "single-site potential: matrix must be Hermitian");
    Eigen::SelfAdjointEigenSolver<Mat> es(matrix_, Eigen::EigenvaluesOnly);
    validate(es.eigenvalues().minCoeff() >= -1e-12, "single-site potential: u must be positive semidefinite");
    matrix_norm_ = std::max(std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff()));
  }

  // A prod_j cos^2(pi x_j / 4) on [-2, 2]^d.
  static SingleSite cos2(double amplitude, const Mat& matrix) {
    return SingleSite(
        "cos2",
        [](const Point& x, int d) {
          double v = 1.0;
          for (int j = 0; j < d; ++j) {
            const double t = x[static_cast<std::size_t>(j)];
            if (std::abs(t) >= 2.0) return 0.0;
            const double c = std::cos(kPi * t / 4.0);
            v *= c * c;
          }
          return v;
        },
        matrix, amplitude);
  }

  // A prod_j exp(1 - 1/(1 - (x_j/2)^2)).
  static SingleSite bump(double amplitude, const Mat& matrix) {
    return SingleSite(
        "bump",
        [](const Point& x, int d) {
          double v = 1.0;
          for (int j = 0; j < d; ++j) {
            const double t = x[static_cast<std::size_t>(j)] / 2.0;
            if (std::abs(t) >= 1.0) return 0.0;
            v *= std::exp(1.0 - 1.0 / (1.0 - t * t));
          }
          return v;
        },
        matrix, amplitude);
  }

  const std::string& name() const { return name_; }
  const Mat& matrix() const { return matrix_; }
  double amplitude() const { return amplitude_; }
  int fiber() const { return static_cast<int>(matrix_.rows()); }

  double profile(const Point& x, int d) const {
    for (int j = 0; j < d; ++j)
      if (std::abs(x[static_cast<std::size_t>(j)]) > 2.0) return 0.0;
    return amplitude_ * profile_(x, d);
  }
  Mat value(const Point& x, int d) const { return profile(x, d) * matrix_; }

  // sup_x ||u(x)||, with the profile maximum taken at the origin for the built-in shapes.
  double sup_norm() const { return amplitude_ * matrix_norm_; }

 private:
  std::string name_;
  Profile profile_;
  Mat matrix_;
  double amplitude_;
  double matrix_norm_ = 0.0;
};

// ---------------------------------------------------------------------------

class DisorderModel {
 public:
  DisorderModel(int d, CouplingLaw law, double radius, SingleSite u)
      : d_(d), law_(std::move(law)), radius_(radius), u_(std::move(u)) {
    validate(d >= 1 && d <= kMaxSpatialDim, "disorder model: dimension must be 1..3");
    validate(radius > 0.0 && radius < 0.5, "disorder model: displacement radius R must satisfy 0 < R < 1/2");
  }

  int dim() const { return d_; }
  int fiber() const { return u_.fiber(); }
  const CouplingLaw& law() const { return law_; }
  double radius() const { return radius_; }
  const SingleSite& single_site() const { return u_; }

  // max(m, M) ||u||_inf times the number of unit cells meeting [-2, 2]^d.
  double sup_bound() const { return law_.bound() * u_.sup_norm() * std::pow(5.0, d_); }

 private:
  int d_;
  CouplingLaw law_;
  double radius_;
  SingleSite u_;
};

// ---------------------------------------------------------------------------
// Lambda_L cap Z^d, half-open: -L/2 <= i_j < L/2.

inline std::vector<Coords> lattice_indices(int d, double side) {
  const int lo = static_cast<int>(std::ceil(-0.5 * side - 1e-12));
  const int hi = static_cast<int>(std::ceil(0.5 * side - 1e-12));  // exclusive
  std::vector<Coords> out;
  std::vector<int> cur(static_cast<std::size_t>(d), lo);
  if (hi <= lo) return out;
  while (true) {
    Coords c{0, 0, 0};
    for (int j = 0; j < d; ++j) c[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j)];
    out.push_back(c);
    int k = d - 1;
    while (k >= 0 && cur[static_cast<std::size_t>(k)] == hi - 1) cur[static_cast<std::size_t>(k--)] = lo;
    if (k < 0) break;
    ++cur[static_cast<std::size_t>(k)];
  }
  return out;
}

inline bool in_lattice_box(const Coords& c, int d, double side) {
  for (int j = 0; j < d; ++j) {
    const double v = c[static_cast<std::size_t>(j)];
    if (!(v >= -0.5 * side - 1e-12 && v < 0.5 * side - 1e-12)) return false;
  }
  return true;
}

struct Impurity {
  Coords index{0, 0, 0};
  double lambda = 0.0;
  Point xi{0, 0, 0};
};

class DisorderRealization {
 public:
  DisorderRealization(int d, double side, std::uint64_t seed, std::vector<Impurity> impurities)
      : d_(d), side_(side), seed_(seed), impurities_(std::move(impurities)) {
    validate(d >= 1 && d <= kMaxSpatialDim, "realization: dimension must be 1..3");
    validate(side > 0.0, "realization: box side must be positive");
  }

  int dim() const { return d_; }
  double box_side() const { return side_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<Impurity>& impurities() const { return impurities_; }
  std::size_t size() const { return impurities_.size(); }

  // Impurities indexed in Lambda_side.
  DisorderRealization restricted(double side) const {
    std::vector<Impurity> kept;
    for (const auto& imp : impurities_)
      if (in_lattice_box(imp.index, d_, side)) kept.push_back(imp);
    return DisorderRealization(d_, std::min(side, side_), seed_, std::move(kept));
  }

  DisorderRealization with_couplings_zeroed() const {
    auto copy = impurities_;
    for (auto& imp : copy) imp.lambda = 0.0;
    return DisorderRealization(d_, side_, seed_, std::move(copy));
  }

  // Cyclic shift of the lattice indices by gamma on the torus of side box_side (integer).
  DisorderRealization shifted(const Coords& gamma) const {
    const int n = static_cast<int>(std::lround(side_));
    validate(std::abs(side_ - n) < 1e-12, "realization shift: box side must be an integer");
    const int lo = static_cast<int>(std::ceil(-0.5 * side_ - 1e-12));
    auto copy = impurities_;
    for (auto& imp : copy)
      for (int j = 0; j < d_; ++j) {
        int& v = imp.index[static_cast<std::size_t>(j)];
        v = lo + (((v - lo + gamma[static_cast<std::size_t>(j)]) % n) + n) % n;
      }
    return DisorderRealization(d_, side_, seed_, std::move(copy));
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dimension"] = d_;
    j["box_side"] = side_;
    j["seed"] = seed_;
    auto& idx = j["indices"] = nlohmann::json::array();
    auto& lam = j["lambda"] = nlohmann::json::array();
    auto& xi = j["xi"] = nlohmann::json::array();
    for (const auto& imp : impurities_) {
      idx.push_back(std::vector<int>(imp.index.begin(), imp.index.begin() + d_));
      lam.push_back(imp.lambda);
      xi.push_back(std::vector<double>(imp.xi.begin(), imp.xi.begin() + d_));
    }
    return j;
  }

  static DisorderRealization from_json(const nlohmann::json& j) {
    try {
      const int d = j.at("dimension").get<int>();
      const double side = j.at("box_side").get<double>();
      const auto seed = j.at("seed").get<std::uint64_t>();
      const auto& idx = j.at("indices");
      const auto& lam = j.at("lambda");
      const auto& xi = j.at("xi");
      validate(idx.size() == lam.size() && lam.size() == xi.size(), "realization json: array lengths differ");
      std::vector<Impurity> imps(lam.size());
      for (std::size_t k = 0; k < imps.size(); ++k) {
        const auto ii = idx[k].get<std::vector<int>>();
        const auto xx = xi[k].get<std::vector<double>>();
        validate(static_cast<int>(ii.size()) == d && static_cast<int>(xx.size()) == d,
                 "realization json: entry has wrong dimension");
        for (int c = 0; c < d; ++c) {
          imps[k].index[static_cast<std::size_t>(c)] = ii[static_cast<std::size_t>(c)];
          imps[k].xi[static_cast<std::size_t>(c)] = xx[static_cast<std::size_t>(c)];
        }
        imps[k].lambda = lam[k].get<double>();
      }
      return DisorderRealization(d, side, seed, std::move(imps));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("realization json: ") + e.what());
    }
  }

 private:
  int d_;
  double side_;
  std::uint64_t seed_;
  std::vector<Impurity> impurities_;
};

inline Impurity sample_impurity(const DisorderModel& model, const Coords& index, std::uint64_t seed) {
  Impurity imp;
  imp.index = index;
  CounterRng lrng(seed, index, model.dim(), RngTag::coupling);
  imp.lambda = model.law().sample(lrng);
  CounterRng xrng(seed, index, model.dim(), RngTag::displacement);
  const double R = model.radius();
  while (true) {
    Point p{0, 0, 0};
    double r2 = 0.0;
    for (int j = 0; j < model.dim(); ++j) {
      p[static_cast<std::size_t>(j)] = R * (2.0 * xrng.uniform() - 1.0);
      r2 += p[static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(j)];
    }
    if (r2 <= R * R) {
      imp.xi = p;
      break;
    }
  }
  return imp;
}

inline DisorderRealization sample_realization(const DisorderModel& model, double box_side, std::uint64_t seed) {
  validate(box_side > 0.0, "sample_realization: box side must be positive");
  std::vector<Impurity> imps;
  for (const Coords& c : lattice_indices(model.dim(), box_side)) imps.push_back(sample_impurity(model, c, seed));
  return DisorderRealization(model.dim(), box_side, seed, std::move(imps));
}

// ---------------------------------------------------------------------------
// Assembled potential: one Hermitian n x n block per grid site.

struct PotentialField {
  Grid grid;
  std::vector<Mat> blocks;

  Mat matrix() const {
    const int n = blocks.empty() ? 0 : static_cast<int>(blocks.front().rows());
    return block_diagonal(grid, n, [&](Index s) { return blocks[static_cast<std::size_t>(s)]; });
  }
  double sup_norm() const {
    double best = 0.0;
    for (const Mat& b : blocks) {
      Eigen::SelfAdjointEigenSolver<Mat> es(b, Eigen::EigenvaluesOnly);
      best = std::max({best, std::abs(es.eigenvalues().minCoeff()), std::abs(es.eigenvalues().maxCoeff())});
    }
    return best;
  }
};

// sum_i lambda_i u(x - xi_i - i), with each translate snapped to the grid point nearest
// to i + xi_i and then sampled at exact grid offsets; wraps around the torus.
inline PotentialField assemble_potential(const DisorderRealization& realization, const Grid& grid,
                                         const DisorderModel& model) {
  require(grid.dim() == model.dim() && realization.dim() == model.dim(),
          "assemble_potential: dimension mismatch");
  require(realization.box_side() <= grid.side() + 1e-12, "assemble_potential: grid does not cover Lambda_L");
  const int d = grid.dim();
  const int n = model.fiber();
  const double h = grid.spacing();
  const int reach = static_cast<int>(std::floor(2.0 / h + 1e-9));
  const int width = 2 * reach + 1;

  // tabulate the profile on the offset stencil once
  std::size_t stencil_size = 1;
  for (int j = 0; j < d; ++j) stencil_size *= static_cast<std::size_t>(width);
  std::vector<double> prof(stencil_size);
  std::vector<Coords> offs(stencil_size);
  for (std::size_t k = 0; k < stencil_size; ++k) {
    std::size_t r = k;
    Coords o{0, 0, 0};
    Point x{0, 0, 0};
    for (int j = d - 1; j >= 0; --j) {
      o[static_cast<std::size_t>(j)] = static_cast<int>(r % static_cast<std::size_t>(width)) - reach;
      x[static_cast<std::size_t>(j)] = o[static_cast<std::size_t>(j)] * h;
      r /= static_cast<std::size_t>(width);
    }
    offs[k] = o;
    prof[k] = model.single_site().profile(x, d);
  }

  PotentialField field{grid, std::vector<Mat>(static_cast<std::size_t>(grid.sites()), Mat::Zero(n, n))};
  std::vector<double> scalar(static_cast<std::size_t>(grid.sites()), 0.0);
  for (const Impurity& imp : realization.impurities()) {
    if (imp.lambda == 0.0) continue;
    Coords center{0, 0, 0};
    for (int j = 0; j < d; ++j) {
      const double pos = imp.index[static_cast<std::size_t>(j)] + imp.xi[static_cast<std::size_t>(j)];
      center[static_cast<std::size_t>(j)] = static_cast<int>(std::lround((pos + 0.5 * grid.side()) / h));
    }
    for (std::size_t k = 0; k < stencil_size; ++k) {
      if (prof[k] == 0.0) continue;
      Coords c{0, 0, 0};
      for (int j = 0; j < d; ++j)
        c[static_cast<std::size_t>(j)] = center[static_cast<std::size_t>(j)] + offs[k][static_cast<std::size_t>(j)];
      scalar[static_cast<std::size_t>(grid.site(c))] += imp.lambda * prof[k];
    }
  }
  const Mat& U = model.single_site().matrix();
  for (std::size_t s = 0; s < scalar.size(); ++s)
    if (scalar[s] != 0.0) field.blocks[s] = scalar[s] * U;
  return field;
}

// H_0 + V_omega on the grid torus.
inline DiscreteOperator build_H_omega(const DiracSymbol& symbol, const PeriodicBackground& background,
                                      const DisorderModel& model, const DisorderRealization& realization,
                                      const Grid& grid, Backend backend) {
  require(model.fiber() == symbol.fiber() && model.dim() == symbol.dim(), "build_H_omega: model/symbol mismatch");
  DiscreteOperator h0 = build_H0(symbol, grid, background, backend);
  const PotentialField v = assemble_potential(realization, grid, model);
  Mat h = h0.matrix();
  const int n = symbol.fiber();
  for (Index s = 0; s < grid.sites(); ++s) h.block(s * n, s * n, n, n) += v.blocks[static_cast<std::size_t>(s)];
  return DiscreteOperator(std::move(h), grid, n, backend);
}

// H^per_{omega,L}: the operator on the torus of side `sub_box_side`, keeping only the
// impurities indexed in Lambda_L.
inline DiscreteOperator build_periodic_restriction(const DiracSymbol& symbol, const PeriodicBackground& background,
                                                   const DisorderModel& model, const DisorderRealization& realization,
                                                   double sub_box_side, int points_per_unit, Backend backend) {
  require(sub_box_side <= realization.box_side() + 1e-12,
          "build_periodic_restriction: sub-box larger than the realization's box");
  validate(std::abs(sub_box_side - std::round(sub_box_side)) < 1e-12 && sub_box_side >= 1.0,
           "build_periodic_restriction: sub-box side must be an integer multiple of the unit period");
  const int side = static_cast<int>(std::lround(sub_box_side));
  const Grid g = Grid::lattice(symbol.dim(), side, points_per_unit);
  return build_H_omega(symbol, background, model, realization.restricted(sub_box_side), g, backend);
}

}  // namespace diracdos
