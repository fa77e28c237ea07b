#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "diracdos/disorder.hpp"
#include "diracdos/models.hpp"
#include "diracdos/spectral.hpp"

using namespace diracdos;

namespace {

Mat lower_projector() {
  Mat p = Mat::Zero(2, 2);
  p(1, 1) = 1.0;
  return p;
}

DisorderModel scalar_model(int d = 1) {
  return DisorderModel(d, CouplingLaw::uniform(0.0, 1.0), 0.25, SingleSite::cos2(1.6, lower_projector()));
}

}  // namespace

TEST(CouplingLaw, DegenerateLawRejected) {
  try {
    CouplingLaw::uniform(0.0, 0.0);
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate coupling law"), std::string::npos);
  }
  EXPECT_THROW(CouplingLaw::uniform(-1.0, 1.0), ValidationError);
}

TEST(CouplingLaw, UniformMomentsAndSupNorm) {
  const auto law = CouplingLaw::uniform(0.5, 1.5);
  EXPECT_DOUBLE_EQ(law.density_sup(), 0.5);
  EXPECT_DOUBLE_EQ(law.mean(), 0.5);
  EXPECT_DOUBLE_EQ(law.bound(), 1.5);
}

TEST(CouplingLaw, TruncatedTriangularIsNormalized) {
  const auto law = CouplingLaw::truncated_triangular(0.0, 1.0, 0.3, 1.5);
  // trapezoid rule on the density
  const int n = 200000;
  double mass = 0.0, first = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = (i + 0.5) / n;
    mass += law.density(x) / n;
    first += x * law.density(x) / n;
  }
  EXPECT_NEAR(mass, 1.0, 1e-9);
  EXPECT_NEAR(first, law.mean(), 1e-9);
  EXPECT_NEAR(law.density_sup(), law.density(0.3), 1e-12);
  EXPECT_THROW(CouplingLaw::truncated_triangular(0.0, 1.0, 0.3, 0.5), ValidationError);
  // empirical mean
  CounterRng rng(7, Coords{0, 0, 0}, 1, RngTag::coupling);
  double s = 0.0;
  for (int i = 0; i < 20000; ++i) s += law.sample(rng);
  EXPECT_NEAR(s / 20000, law.mean(), 0.01);
}

TEST(DisorderModel, Invariants) {
  EXPECT_THROW(DisorderModel(1, CouplingLaw::uniform(0, 1), 0.5, SingleSite::cos2(1.0, lower_projector())),
               ValidationError);
  EXPECT_THROW(DisorderModel(1, CouplingLaw::uniform(0, 1), 0.0, SingleSite::cos2(1.0, lower_projector())),
               ValidationError);
  EXPECT_THROW(SingleSite::cos2(1.0, -lower_projector()), ValidationError);
  const auto m = scalar_model();
  EXPECT_DOUBLE_EQ(m.sup_bound(), 1.0 * 1.6 * 5.0);
  // u vanishes outside [-2, 2]
  EXPECT_EQ(m.single_site().profile(Point{2.0, 0, 0}, 1), 0.0);
  EXPECT_EQ(m.single_site().profile(Point{-2.5, 0, 0}, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.single_site().profile(Point{0, 0, 0}, 1), 1.6);
}

TEST(LatticeIndices, HalfOpenBox) {
  const auto idx = lattice_indices(1, 8.0);
  ASSERT_EQ(idx.size(), 8u);
  EXPECT_EQ(idx.front()[0], -4);
  EXPECT_EQ(idx.back()[0], 3);
  EXPECT_EQ(lattice_indices(2, 4.0).size(), 16u);
  EXPECT_EQ(lattice_indices(1, 7.0).size(), 7u);
}

TEST(SampleRealization, DeterministicAndBoxIndependent) {
  const auto m = scalar_model(2);
  const auto a = sample_realization(m, 8.0, 42);
  const auto b = sample_realization(m, 8.0, 42);
  ASSERT_EQ(a.size(), 64u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.impurities()[i].lambda, b.impurities()[i].lambda);
    EXPECT_EQ(a.impurities()[i].xi, b.impurities()[i].xi);
  }
  // the same index carries the same variables in a larger box
  const auto big = sample_realization(m, 16.0, 42);
  std::size_t matched = 0;
  for (const auto& imp : big.impurities())
    for (const auto& small : a.impurities())
      if (imp.index == small.index) {
        EXPECT_EQ(imp.lambda, small.lambda);
        EXPECT_EQ(imp.xi, small.xi);
        ++matched;
      }
  EXPECT_EQ(matched, 64u);
  const auto other = sample_realization(m, 8.0, 43);
  EXPECT_NE(other.impurities()[0].lambda, a.impurities()[0].lambda);
}

TEST(SampleRealization, UniformMomentsAndBallConstraint) {
  const auto m = scalar_model(2);
  double s = 0.0, max_r = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; count < 10000; ++seed) {
    for (const auto& imp : sample_realization(m, 10.0, seed).impurities()) {
      s += imp.lambda;
      EXPECT_GE(imp.lambda, 0.0);
      EXPECT_LE(imp.lambda, 1.0);
      max_r = std::max(max_r, std::hypot(imp.xi[0], imp.xi[1]));
      ++count;
    }
  }
  EXPECT_NEAR(s / count, 0.5, 0.02);
  EXPECT_LE(max_r, 0.25);
  EXPECT_GT(max_r, 0.2);
}

TEST(SampleRealization, IndependenceProxy) {
  const auto m = scalar_model(1);
  const int n = 10000;
  std::vector<double> a(n), b(n), c(n);
  for (int s = 0; s < n; ++s) {
    const auto r = sample_realization(m, 4.0, static_cast<std::uint64_t>(s));
    a[s] = r.impurities()[0].lambda;
    b[s] = r.impurities()[1].lambda;
    c[s] = r.impurities()[0].xi[0];
  }
  auto corr = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
      mx += x[i];
      my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (int i = 0; i < n; ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
  };
  EXPECT_LT(std::abs(corr(a, b)), 0.05);
  EXPECT_LT(std::abs(corr(a, c)), 0.05);
}

TEST(Realization, JsonRoundTrip) {
  const auto r = sample_realization(scalar_model(2), 6.0, 99);
  const auto back = DisorderRealization::from_json(nlohmann::json::parse(r.to_json().dump()));
  EXPECT_EQ(back.seed(), 99u);
  EXPECT_EQ(back.box_side(), 6.0);
  ASSERT_EQ(back.size(), r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    EXPECT_EQ(back.impurities()[i].index, r.impurities()[i].index);
    EXPECT_EQ(back.impurities()[i].lambda, r.impurities()[i].lambda);
    EXPECT_EQ(back.impurities()[i].xi, r.impurities()[i].xi);
  }
  EXPECT_THROW(DisorderRealization::from_json(nlohmann::json::parse(R"({"dimension":1})")), ValidationError);
}

TEST(AssemblePotential, ZeroCouplingGivesZeroField) {
  const auto m = scalar_model();
  const Grid g = Grid::lattice(1, 8, 4);
  const auto f = assemble_potential(sample_realization(m, 8.0, 1).with_couplings_zeroed(), g, m);
  for (const auto& b : f.blocks) EXPECT_EQ(max_abs(b), 0.0);
}

TEST(AssemblePotential, SingleImpurityReproducesU) {
  const auto m = scalar_model();
  const Grid g = Grid::lattice(1, 8, 4);
  Impurity imp;
  imp.lambda = 1.0;
  const DisorderRealization r(1, 8.0, 0, {imp});
  const auto f = assemble_potential(r, g, m);
  for (Index s = 0; s < g.sites(); ++s) {
    const Mat expect = m.single_site().value(g.point(s), 1);
    EXPECT_LT(max_abs(f.blocks[static_cast<std::size_t>(s)] - expect), 1e-15);
  }
}

TEST(AssemblePotential, OverlappingImpuritiesAddAsMatrices) {
  const Mat u = (Mat(2, 2) << 1.0, cplx(0, 0.5), cplx(0, -0.5), 1.0).finished();
  const DisorderModel m(1, CouplingLaw::uniform(0, 1), 0.25, SingleSite::cos2(1.0, u));
  const Grid g = Grid::lattice(1, 8, 4);
  Impurity a, b;
  a.lambda = 0.3;
  b.index = Coords{1, 0, 0};
  b.lambda = 0.8;
  const auto f = assemble_potential(DisorderRealization(1, 8.0, 0, {a, b}), g, m);
  const Index mid = g.points() / 2 + 2;  // x = 0.5
  ASSERT_NEAR(g.point(mid)[0], 0.5, 1e-15);
  const Mat expect = 0.3 * m.single_site().value(Point{0.5, 0, 0}, 1) + 0.8 * m.single_site().value(Point{-0.5, 0, 0}, 1);
  EXPECT_LT(max_abs(f.blocks[static_cast<std::size_t>(mid)] - expect), 1e-14);
}

TEST(AssemblePotential, DisplacementSnapsToNearestGridPoint) {
  const auto m = scalar_model();
  const Grid g = Grid::lattice(1, 8, 4);
  Impurity imp;
  imp.lambda = 1.0;
  imp.xi = Point{0.2, 0, 0};  // nearest grid point to 0.2 is 0.25
  const auto f = assemble_potential(DisorderRealization(1, 8.0, 0, {imp}), g, m);
  Index peak = 0;
  double best = -1;
  for (Index s = 0; s < g.sites(); ++s)
    if (f.blocks[static_cast<std::size_t>(s)](1, 1).real() > best) {
      best = f.blocks[static_cast<std::size_t>(s)](1, 1).real();
      peak = s;
    }
  EXPECT_NEAR(g.point(peak)[0], 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(best, 1.6);
}

TEST(AssemblePotential, NonnegativeAndBoundedByMinf) {
  const auto m = scalar_model(2);
  const Grid g = Grid::lattice(2, 6, 2);
  const auto f = assemble_potential(sample_realization(m, 6.0, 5), g, m);
  for (const auto& b : f.blocks) {
    EXPECT_LT(max_abs(b - b.adjoint()), 1e-15);
    Eigen::SelfAdjointEigenSolver<Mat> es(b);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
  EXPECT_LE(f.sup_norm(), m.sup_bound());
}

TEST(AssemblePotential, TranslationCovariance) {
  const auto m = scalar_model(2);
  const Grid g = Grid::lattice(2, 6, 2);
  const auto r = sample_realization(m, 6.0, 11);
  const Coords gamma{2, -1, 0};
  const auto f = assemble_potential(r, g, m);
  const auto fs = assemble_potential(r.shifted(gamma), g, m);
  const int c = g.points_per_unit();
  for (Index s = 0; s < g.sites(); ++s) {
    Coords cs = g.coords(s);
    cs[0] += gamma[0] * c;
    cs[1] += gamma[1] * c;
    EXPECT_LT(max_abs(fs.blocks[static_cast<std::size_t>(g.site(cs))] - f.blocks[static_cast<std::size_t>(s)]), 1e-14);
  }
}

TEST(AssemblePotential, GridMustCoverBox) {
  const auto m = scalar_model();
  EXPECT_THROW(assemble_potential(sample_realization(m, 10.0, 1), Grid::lattice(1, 8, 4), m), PreconditionError);
}

TEST(BuildHOmega, ZeroRealizationIsH0) {
  const Model model = make_model("dirac1d");
  const Grid g = Grid::lattice(1, 8, 4);
  const auto omega = sample_realization(model.disorder, 8.0, 3).with_couplings_zeroed();
  const auto h = build_H_omega(model.symbol, model.background, model.disorder, omega, g, Backend::fourier_spectral);
  const auto h0 = build_H0(model.symbol, g, model.background, Backend::fourier_spectral);
  EXPECT_EQ(max_abs(h.matrix() - h0.matrix()), 0.0);
}

TEST(BuildHOmega, MonotoneUnderNonnegativePerturbation) {
  const Model model = make_model("dirac1d");
  const Grid g = Grid::lattice(1, 8, 4);
  const auto h0 = eigenvalues_hermitian(build_H0(model.symbol, g, model.background, Backend::fourier_spectral).matrix());
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto h = eigenvalues_hermitian(
        build_H_omega(model.symbol, model.background, model.disorder, sample_realization(model.disorder, 8.0, s), g,
                      Backend::fourier_spectral)
            .matrix());
    for (Index i = 0; i < h.size(); ++i) EXPECT_GE(h(i), h0(i) - 1e-10);  // Weyl monotonicity, sorted
  }
}

TEST(BuildHOmega, DisorderCreatesStatesNearUpperGapEdge) {
  const Model model = make_model("dirac1d");
  int with_states = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto op = build_periodic_restriction(model.symbol, model.background, model.disorder,
                                               sample_realization(model.disorder, 16.0, s), 16.0, 4,
                                               Backend::fourier_spectral);
    const RVec ev = eigenvalues_hermitian(op.matrix());
    bool near_top = false;
    for (Index i = 0; i < ev.size(); ++i) near_top = near_top || (ev(i) > 0.5 && ev(i) < 1.0);
    with_states += near_top ? 1 : 0;
  }
  EXPECT_GT(with_states, 10);
}

TEST(PeriodicRestriction, FullBoxMatchesHOmega) {
  const Model model = make_model("dirac1d");
  const auto omega = sample_realization(model.disorder, 12.0, 8);
  const auto a = build_periodic_restriction(model.symbol, model.background, model.disorder, omega, 12.0, 4,
                                            Backend::fourier_spectral);
  const auto b = build_H_omega(model.symbol, model.background, model.disorder, omega, Grid::lattice(1, 12, 4),
                               Backend::fourier_spectral);
  EXPECT_EQ(max_abs(a.matrix() - b.matrix()), 0.0);
}

TEST(PeriodicRestriction, ZeroDisorderFollowsSmallTorusDispersion) {
  const Model model = make_model("dirac1d");
  const auto omega = sample_realization(model.disorder, 20.0, 8).with_couplings_zeroed();
  const auto op = build_periodic_restriction(model.symbol, model.background, model.disorder, omega, 10.0, 4,
                                             Backend::fourier_spectral);
  std::vector<double> expect;
  for (int k = -20; k < 20; ++k) {
    const double e = std::hypot(2.0 * kPi * k / 10.0, 1.0);
    expect.push_back(e);
    expect.push_back(-e);
  }
  std::sort(expect.begin(), expect.end());
  const RVec ev = eigenvalues_hermitian(op.matrix());
  for (Index i = 0; i < ev.size(); ++i) EXPECT_NEAR(ev(i), expect[static_cast<std::size_t>(i)], 1e-10 * std::abs(expect[i]));
  for (Index i = 0; i < ev.size(); ++i) EXPECT_FALSE(ev(i) > -1.0 + 1e-9 && ev(i) < 1.0 - 1e-9);
}

TEST(PeriodicRestriction, UsesOnlyImpuritiesInsideTheSubBox) {
  const Model model = make_model("dirac1d");
  const auto omega = sample_realization(model.disorder, 20.0, 8);
  const auto a = build_periodic_restriction(model.symbol, model.background, model.disorder, omega, 10.0, 4,
                                            Backend::fourier_spectral);
  const auto b = build_periodic_restriction(model.symbol, model.background, model.disorder,
                                            sample_realization(model.disorder, 10.0, 8), 10.0, 4,
                                            Backend::fourier_spectral);
  EXPECT_EQ(max_abs(a.matrix() - b.matrix()), 0.0);
}

TEST(PeriodicRestriction, IncompatibleSubBoxRejected) {
  const Model model = make_model("dirac1d");
  const auto omega = sample_realization(model.disorder, 20.0, 8);
  EXPECT_THROW(build_periodic_restriction(model.symbol, model.background, model.disorder, omega, 10.5, 4,
                                          Backend::fourier_spectral),
               ValidationError);
  EXPECT_THROW(build_periodic_restriction(model.symbol, model.background, model.disorder, omega, 24.0, 4,
                                          Backend::fourier_spectral),
               PreconditionError);
}
