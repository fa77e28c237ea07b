#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "diracdos/models.hpp"
#include "diracdos/operator_core.hpp"
#include "diracdos/spectral.hpp"

using namespace diracdos;

namespace {

std::vector<double> sorted_eigs(const Mat& m) {
  RVec e = eigenvalues_hermitian(m);
  return std::vector<double>(e.data(), e.data() + e.size());
}

std::vector<double> sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

DiracSymbol pauli_x_symbol() { return DiracSymbol({pauli_x()}); }

// 2x2 block of H in the plane-wave basis e^{i p_k x} e_a / sqrt(N), 1D.
Mat plane_wave_block(const Mat& h, const Grid& g, int k) {
  const int N = g.points();
  Mat v = Mat::Zero(2 * N, 2);
  const double p = 2.0 * kPi * k / g.side();
  for (int j = 0; j < N; ++j) {
    const cplx e = std::exp(kI * p * g.position(j)) / std::sqrt(static_cast<double>(N));
    v(2 * j, 0) = e;
    v(2 * j + 1, 1) = e;
  }
  return v.adjoint() * h * v;
}

}  // namespace

TEST(DiracSymbol, RejectsNonHermitianSigma) {
  Mat s(2, 2);
  s << 0, 1, 0, 0;
  EXPECT_THROW(DiracSymbol({s}), ValidationError);
  EXPECT_THROW(DiracSymbol(std::vector<Mat>{}), ValidationError);
}

TEST(Ellipticity, PauliX1D) {
  const auto r = ellipticity_constant(pauli_x_symbol(), 200);
  EXPECT_TRUE(r.elliptic);
  EXPECT_NEAR(r.constant, 1.0, 1e-12);
}

TEST(Ellipticity, AnticommutingPair2D) {
  const auto r = ellipticity_constant(DiracSymbol({pauli_x(), pauli_z()}), 500);
  EXPECT_TRUE(r.elliptic);
  EXPECT_NEAR(r.constant, 1.0, 1e-12);
}

TEST(Ellipticity, DegeneratePairIsFlagged) {
  const auto r = ellipticity_constant(DiracSymbol({pauli_x(), pauli_x()}), 500);
  EXPECT_FALSE(r.elliptic);
  EXPECT_EQ(r.constant, 0.0);
}

TEST(Ellipticity, ThreeDimensionalPauliTriple) {
  const auto r = ellipticity_constant(DiracSymbol({pauli_x(), pauli_y(), pauli_z()}), 300);
  EXPECT_TRUE(r.elliptic);
  EXPECT_NEAR(r.constant, 1.0, 1e-12);
}

TEST(Ellipticity, TooFewSamplesRejected) {
  EXPECT_THROW(ellipticity_constant(pauli_x_symbol(), 99), PreconditionError);
}

TEST(Grid, FrequencySetAndSpacing) {
  const Grid g(1, 8.0, 64);
  EXPECT_EQ(g.frequencies().size(), 64u);
  EXPECT_DOUBLE_EQ(g.spacing() * g.points(), g.side());
  EXPECT_DOUBLE_EQ(g.frequencies().front(), -2.0 * kPi * 32 / 8.0);
  EXPECT_THROW(Grid(1, 8.0, 63), ValidationError);
  EXPECT_THROW(Grid(1, -1.0, 64), ValidationError);
  const Grid g2 = Grid::lattice(2, 4, 2);
  EXPECT_EQ(g2.sites(), 64);
  EXPECT_EQ(g2.site(g2.coords(37)), 37);
}

TEST(BuildD0, FourierEigenvaluesAreSymbol) {
  const Grid g(1, 8.0, 64);
  const auto op = build_D0(pauli_x_symbol(), g, Backend::fourier_spectral);
  EXPECT_TRUE(is_hermitian(op.matrix(), 1e-14));
  std::vector<double> expect;
  for (int k = -32; k < 32; ++k) {
    expect.push_back(kPi * k / 4.0);
    expect.push_back(-kPi * k / 4.0);
  }
  expect = sorted(expect);
  const auto got = sorted_eigs(op.matrix());
  ASSERT_EQ(got.size(), expect.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10);
}

TEST(BuildD0, AnnihilatesConstants) {
  for (Backend b : {Backend::fourier_spectral, Backend::finite_difference}) {
    const Grid g = Grid::lattice(2, 4, 2);
    const auto op = build_D0(DiracSymbol({pauli_x(), pauli_y()}), g, b);
    Vec c(op.dimension());
    for (Index i = 0; i < c.size(); ++i) c(i) = (i % 2 == 0) ? cplx(1.0, 0.5) : cplx(-0.3, 2.0);
    EXPECT_LT((op.matrix() * c).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BuildD0, FiniteDifferenceDoublingSpectrum) {
  const Grid g(1, 8.0, 64);
  const auto op = build_D0(pauli_x_symbol(), g, Backend::finite_difference);
  std::vector<double> expect;
  for (int k = -32; k < 32; ++k) {
    const double p = kPi * k / 4.0;
    expect.push_back(std::sin(p * g.spacing()) / g.spacing());
    expect.push_back(-std::sin(p * g.spacing()) / g.spacing());
  }
  expect = sorted(expect);
  const auto got = sorted_eigs(op.matrix());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10);
}

TEST(BuildD0, DimensionMismatchRejected) {
  EXPECT_THROW(build_D0(pauli_x_symbol(), Grid(2, 4.0, 4), Backend::fourier_spectral), PreconditionError);
}

TEST(BuildH0, MassiveDiracDispersion) {
  const Model m = make_model("dirac1d");
  const Grid g(1, 8.0, 64);
  const auto op = build_H0(m.symbol, g, m.background, Backend::fourier_spectral);
  std::vector<double> expect;
  for (int k = -32; k < 32; ++k) {
    const double e = std::sqrt(std::pow(kPi * k / 4.0, 2) + 1.0);
    expect.push_back(e);
    expect.push_back(-e);
  }
  expect = sorted(expect);
  const auto got = sorted_eigs(op.matrix());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], expect[i], 1e-10 * std::abs(expect[i]));
}

TEST(BuildH0, ScalarShiftAndScalarS) {
  const Grid g(1, 8.0, 32);
  const auto d0 = sorted_eigs(build_D0(pauli_x_symbol(), g, Backend::fourier_spectral).matrix());
  const auto shifted = sorted_eigs(
      build_H0(pauli_x_symbol(), g, PeriodicBackground::constant(1, Mat::Identity(2, 2), 0.7 * Mat::Identity(2, 2)),
               Backend::fourier_spectral)
          .matrix());
  const auto scaled = sorted_eigs(build_H0(pauli_x_symbol(), g,
                                           PeriodicBackground::constant(1, 2.0 * Mat::Identity(2, 2), Mat::Zero(2, 2)),
                                           Backend::fourier_spectral)
                                      .matrix());
  for (std::size_t i = 0; i < d0.size(); ++i) {
    EXPECT_NEAR(shifted[i], d0[i] + 0.7, 1e-10);
    EXPECT_NEAR(scaled[i], 4.0 * d0[i], 1e-10);
  }
}

TEST(BuildH0, NonPositiveBackgroundRejected) {
  Mat s = Mat::Identity(2, 2);
  s(1, 1) = -0.1;
  EXPECT_THROW(PeriodicBackground::constant(1, s, Mat::Zero(2, 2)), ValidationError);
}

TEST(BuildH0, PeriodicBackgroundTilesAndIsHermitian) {
  auto bg = PeriodicBackground::sampled(
      1, 2, 4, [](const Point& x) { return Mat((1.0 + 0.3 * std::cos(2 * kPi * x[0])) * Mat::Identity(2, 2)); },
      [](const Point& x) { return Mat(pauli_z() + 0.2 * std::sin(2 * kPi * x[0]) * Mat::Identity(2, 2)); });
  EXPECT_NEAR(bg.s_minus(), 0.7, 1e-12);
  EXPECT_NEAR(bg.s_plus(), 1.3, 1e-12);
  const Grid g = Grid::lattice(1, 6, 4);
  for (Backend b : {Backend::fourier_spectral, Backend::finite_difference}) {
    const auto op = build_H0(pauli_x_symbol(), g, bg, b);
    EXPECT_TRUE(is_hermitian(op.matrix(), 1e-10));
  }
  // grid points sharing a cell offset carry the same S
  for (int j = 0; j + 4 < g.points(); ++j) EXPECT_EQ(max_abs(bg.s_at(g, j) - bg.s_at(g, j + 4)), 0.0);
  // x = 0 is grid point N/2 and cell offset 0
  EXPECT_NEAR(bg.s_at(g, g.points() / 2)(0, 0).real(), 1.3, 1e-12);
  // a grid with a different cell sampling is rejected
  EXPECT_THROW(build_H0(pauli_x_symbol(), Grid::lattice(1, 6, 8), bg, Backend::fourier_spectral), PreconditionError);
}

TEST(BuildH0, BackendConsistencyIsSecondOrder) {
  const Model m = make_model("dirac1d");
  std::vector<double> errs;
  for (int N : {32, 64, 128}) {
    const Grid g(1, 8.0, N);
    const Mat hf = build_H0(m.symbol, g, m.background, Backend::fourier_spectral).matrix();
    const Mat hd = build_H0(m.symbol, g, m.background, Backend::finite_difference).matrix();
    double err = 0.0;
    for (int k = -4; k < 4; ++k) {  // lowest quarter of the coarsest grid's frequencies
      const RVec ef = eigenvalues_hermitian(plane_wave_block(hf, g, k));
      const RVec ed = eigenvalues_hermitian(plane_wave_block(hd, g, k));
      err = std::max(err, (ef - ed).cwiseAbs().maxCoeff());
    }
    errs.push_back(err);
  }
  EXPECT_GE(errs[0] / errs[1], 3.5);
  EXPECT_GE(errs[1] / errs[2], 3.5);
}

TEST(BuildH0, GapCertification) {
  const Model m = make_model("dirac1d");
  const auto ev = eigenvalues_hermitian(build_H0(m.symbol, Grid(1, 8.0, 64), m.background, Backend::fourier_spectral).matrix());
  const double d = 1e-9;
  for (Index i = 0; i < ev.size(); ++i) EXPECT_FALSE(ev(i) > -1.0 + d && ev(i) < 1.0 - d) << ev(i);
}

TEST(DiscreteOperator, RejectsWrongDimensionAndNonHermitian) {
  const Grid g(1, 4.0, 4);
  EXPECT_THROW(DiscreteOperator(Mat::Zero(5, 5), g, 2, Backend::fourier_spectral), ValidationError);
  Mat a = Mat::Zero(8, 8);
  a(0, 1) = 1.0;
  EXPECT_THROW(DiscreteOperator(a, g, 2, Backend::fourier_spectral), ValidationError);
  EXPECT_NO_THROW(DiscreteOperator(a, g, 2, Backend::fourier_spectral, false));
}

TEST(DiscreteOperator, DenseCapEnforced) {
  const Grid g(1, 2100.0, 2100);
  EXPECT_THROW(build_D0(pauli_x_symbol(), g, Backend::finite_difference), ValidationError);
}

TEST(IndicatorField, BoxesAndSmoothCutoffs) {
  const Grid g = Grid::lattice(1, 16, 4);
  const auto box = IndicatorField::centered_box(g, 8.0);
  EXPECT_EQ((box.values().array() == 1.0).count(), 32);  // half-open [-4, 4)
  EXPECT_DOUBLE_EQ(box.support_measure(), 8.0);
  const auto sm = IndicatorField::smooth_box(g, Point{0, 0, 0}, 2.0, 4.0);
  EXPECT_TRUE(sm.smooth());
  EXPECT_DOUBLE_EQ(sm.sup_gradient_bound(), 1.0);
  for (Index s = 0; s < g.sites(); ++s) {
    const double x = g.point(s)[0];
    if (std::abs(x) <= 2.0) {
      EXPECT_EQ(sm.value(s), 1.0);
    }
    if (std::abs(x) >= 4.0) {
      EXPECT_EQ(sm.value(s), 0.0);
    }
  }
  // discrete gradient within the advertised bound
  for (int j = 0; j + 1 < g.points(); ++j)
    EXPECT_LE(std::abs(sm.value(j + 1) - sm.value(j)) / g.spacing(), sm.sup_gradient_bound() + 1e-12);
  EXPECT_THROW(IndicatorField(g, RVec::Constant(g.sites(), 1.5), SubBox{}, false, 0.0), ValidationError);
}

TEST(Commutator, ConstantCutoffsCommute) {
  const Model m = make_model("dirac1d");
  const Grid g = Grid::lattice(1, 8, 4);
  for (Backend b : {Backend::fourier_spectral, Backend::finite_difference}) {
    const auto h = build_H0(m.symbol, g, m.background, b);
    EXPECT_EQ(max_abs(commutator_with_cutoff(h, IndicatorField::constant(g, 1.0))), 0.0);
    EXPECT_LT(max_abs(commutator_with_cutoff(h, IndicatorField::constant(g, 0.37))), 1e-15);
  }
}

TEST(Commutator, FiniteDifferenceBeltSupportAndNorm) {
  const Model m = make_model("dirac1d");
  const Grid g = Grid::lattice(1, 16, 4);
  const auto h = build_H0(m.symbol, g, m.background, Backend::finite_difference);
  const auto chi = IndicatorField::smooth_box(g, Point{0, 0, 0}, 2.0, 5.0);
  const Mat c = commutator_with_cutoff(h, chi);
  // rows and columns vanish further than one stencil width from the belt where grad chi != 0
  std::vector<bool> belt(static_cast<std::size_t>(g.points()), false);
  for (int j = 0; j < g.points(); ++j) {
    const double l = chi.value(g.wrap(j - 1)), r = chi.value(g.wrap(j + 1)), v = chi.value(j);
    belt[static_cast<std::size_t>(j)] = (l != v) || (r != v);
  }
  for (Index i = 0; i < c.rows(); ++i) {
    const int site = static_cast<int>(i / 2);
    bool near = false;
    for (int o = -1; o <= 1; ++o) near = near || belt[static_cast<std::size_t>(g.wrap(site + o))];
    if (!near) {
      EXPECT_EQ(c.row(i).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ(c.col(i).cwiseAbs().maxCoeff(), 0.0);
    }
  }
  double grad = 0.0;
  for (int j = 0; j < g.points(); ++j) grad = std::max(grad, std::abs(chi.value(g.wrap(j + 1)) - chi.value(j)) / g.spacing());
  const double bound = m.background.s_plus() * m.background.s_plus() * operator_norm(pauli_x()) * grad;
  EXPECT_LE(operator_norm(c), bound * (1.0 + 1e-12));
  // and the commutator tracks sigma (-i chi') at the midpoints to O(h^2)
  Mat direct = Mat::Zero(c.rows(), c.cols());
  for (int j = 0; j < g.points(); ++j) {
    const int jp = g.wrap(j + 1);
    const cplx w = -kI * (chi.value(jp) - chi.value(j)) / (2.0 * g.spacing());
    direct.block(2 * j, 2 * jp, 2, 2) += w * pauli_x();
    direct.block(2 * jp, 2 * j, 2, 2) += w * pauli_x();
  }
  EXPECT_LT(max_abs(c - direct), 1e-14);
}

TEST(MatrixDump, RoundTripsExactly) {
  const Model m = make_model("dirac1d");
  const Mat h = build_H0(m.symbol, Grid(1, 4.0, 8), m.background, Backend::fourier_spectral).matrix();
  std::stringstream ss;
  dump_matrix(ss, h);
  const std::string first = ss.str().substr(0, ss.str().find(' '));
  EXPECT_EQ(first.back(), 'i');
  const Mat back = parse_matrix(ss);
  ASSERT_EQ(back.rows(), h.rows());
  EXPECT_EQ(max_abs(back - h), 0.0);
  EXPECT_EQ(parse_complex("1.5e-3-2e+01i"), cplx(1.5e-3, -20.0));
  EXPECT_THROW(parse_complex("12"), ValidationError);
}
