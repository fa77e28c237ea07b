#pragma once

// Almost-analytic extensions and the Helffer-Sjostrand formula
//
//   phi(A) = (1/pi) int dbar(phi~)(x + iy) (A - x - iy)^{-1} dx dy,
//
// evaluated by quadrature over the upper half plane and doubled using
// dbar(phi~)(conj z) = conj(dbar(phi~)(z)).

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>
#include <string>
#include <vector>

#include "diracdos/common.hpp"
#include "diracdos/disorder.hpp"
#include "diracdos/jet.hpp"
#include "diracdos/models.hpp"
#include "diracdos/spectral.hpp"

namespace diracdos {

// ---------------------------------------------------------------------------
// SmoothBump

class SmoothBump {
 public:
  enum class Kind { bump, plateau };

  // exp(1 - 1/(1 - t^2)) with t the affine map of [s0, s1] onto [-1, 1]; peak value 1.
  static SmoothBump bump(double s0, double s1, std::size_t max_order = 12) {
    return SmoothBump(Kind::bump, s0, s1, s0, s1, max_order);
  }

  // 1 on [p0, p1], smooth_step ramps down to 0 at s0 and s1.
  static SmoothBump plateau(double s0, double p0, double p1, double s1, std::size_t max_order = 12) {
    validate(s0 < p0 && p0 <= p1 && p1 < s1, "plateau bump: need s0 < p0 <= p1 < s1");
    return SmoothBump(Kind::plateau, s0, s1, p0, p1, max_order);
  }

  Kind kind() const { return kind_; }
  std::string kind_name() const { return kind_ == Kind::bump ? "bump" : "plateau"; }
  double lower() const { return s0_; }
  double upper() const { return s1_; }
  double plateau_lower() const { return p0_; }
  double plateau_upper() const { return p1_; }
  std::size_t max_order() const { return max_order_; }

  // Taylor jet of phi at x through the given order.
  Jet jet(double x, std::size_t order) const {
    validate(order <= max_order_, "SmoothBump: requested derivative order exceeds the represented order");
    if (x <= s0_ || x >= s1_) return Jet(order);
    const Jet X = Jet::variable(order, x);
    if (kind_ == Kind::bump) {
      const Jet t = (X + (-0.5 * (s0_ + s1_))) * (2.0 / (s1_ - s0_));
      return flat_exp(1.0 - t * t) * std::exp(1.0);
    }
    const Jet left = smooth_step((X + (-s0_)) * (1.0 / (p0_ - s0_)));
    const Jet right = smooth_step((s1_ - X) * (1.0 / (s1_ - p1_)));
    return left * right;
  }

  double operator()(double x) const {
    if (x <= s0_ || x >= s1_) return 0.0;
    if (kind_ == Kind::bump) {
      const double t = (2.0 * x - s0_ - s1_) / (s1_ - s0_);
      const double q = 1.0 - t * t;
      return q <= 1.0 / 700.0 ? 0.0 : std::exp(1.0 - 1.0 / q);
    }
    return smooth_step((x - s0_) / (p0_ - s0_)) * smooth_step((s1_ - x) / (s1_ - p1_));
  }

  // phi^(k)(x), k = 0..order.
  std::vector<double> derivatives(double x, std::size_t order) const { return jet(x, order).derivatives(); }

  // max |phi^(k)| on a uniform sample of the support.
  double derivative_sup(std::size_t k, int samples = 4001) const {
    double best = 0.0;
    for (int i = 1; i < samples - 1; ++i) {
      const double x = s0_ + (s1_ - s0_) * static_cast<double>(i) / static_cast<double>(samples - 1);
      best = std::max(best, std::abs(derivatives(x, k)[k]));
    }
    return best;
  }

 private:
  SmoothBump(Kind kind, double s0, double s1, double p0, double p1, std::size_t max_order)
      : kind_(kind), s0_(s0), s1_(s1), p0_(p0), p1_(p1), max_order_(max_order) {
    validate(std::isfinite(s0) && std::isfinite(s1) && s0 < s1, "SmoothBump: support must satisfy s0 < s1");
    validate(max_order >= 1 && max_order <= 40, "SmoothBump: derivative order must lie in 1..40");
  }

  Kind kind_;
  double s0_, s1_, p0_, p1_;
  std::size_t max_order_;
};

// ---------------------------------------------------------------------------
// AlmostAnalyticExtension
//
// phi~(x + iy) = tau(y/delta) sum_{k<=N} phi^(k)(x) (iy)^k / k!,  tau(s) = smooth_step(2 - |s|),
// so that
// dbar phi~ = 1/2 [ tau phi^(N+1)(x) (iy)^N / N!  +  i tau_y sum_{k<=N} phi^(k)(x) (iy)^k / k! ].

class AlmostAnalyticExtension {
 public:
  AlmostAnalyticExtension(SmoothBump base, int order, double delta) : base_(std::move(base)), order_(order), delta_(delta) {
    validate(order >= 2, "almost-analytic extension: order must be >= 2");
    validate(static_cast<std::size_t>(order) + 1 <= base_.max_order(),
             "almost-analytic extension: order + 1 exceeds the bump's represented derivative order");
    validate(delta > 0.0 && std::isfinite(delta), "almost-analytic extension: delta must be positive");
  }

  const SmoothBump& base() const { return base_; }
  int order() const { return order_; }
  double delta() const { return delta_; }

  double tau(double y) const { return smooth_step(2.0 - std::abs(y) / delta_); }
  double tau_y(double y) const {
    const double s = 2.0 - std::abs(y) / delta_;
    if (s <= 0.0 || s >= 1.0) return 0.0;
    const Jet j = smooth_step(Jet::variable(1, s));
    return -(y > 0 ? 1.0 : -1.0) * j[1] / delta_;
  }

  cplx value(double x, double y) const {
    if (y == 0.0) return base_(x);
    const double t = tau(y);
    if (t == 0.0) return 0.0;
    return t * taylor(base_.derivatives(x, static_cast<std::size_t>(order_)), y, order_);
  }

  cplx dbar(double x, double y) const {
    if (x <= base_.lower() || x >= base_.upper() || std::abs(y) >= 2.0 * delta_) return 0.0;
    return dbar_from(base_.derivatives(x, static_cast<std::size_t>(order_ + 1)), y);
  }

  // dbar given precomputed phi^(k)(x), k = 0..order+1.
  cplx dbar_from(const std::vector<double>& d, double y) const {
    const double t = tau(y);
    const double ty = tau_y(y);
    cplx out = 0.0;
    if (t != 0.0) out += t * d[static_cast<std::size_t>(order_ + 1)] * ipow_over_factorial(y, order_);
    if (ty != 0.0) out += kI * ty * taylor(d, y, order_);
    return 0.5 * out;
  }

  // sup_x |dbar phi~(x + iy)| <= C |y|^N for |y| <= delta, with C = sup|phi^(N+1)| / (2 N!).
  double decay_constant() const {
    double f = 1.0;
    for (int k = 2; k <= order_; ++k) f *= k;
    return base_.derivative_sup(static_cast<std::size_t>(order_ + 1)) / (2.0 * f);
  }

 private:
  static cplx ipow_over_factorial(double y, int k) {
    cplx v = 1.0;
    for (int j = 1; j <= k; ++j) v *= kI * y / static_cast<double>(j);
    return v;
  }
  static cplx taylor(const std::vector<double>& d, double y, int order) {
    cplx s = 0.0, term = 1.0;
    for (int k = 0; k <= order; ++k) {
      s += d[static_cast<std::size_t>(k)] * term;
      term *= kI * y / static_cast<double>(k + 1);
    }
    return s;
  }

  SmoothBump base_;
  int order_;
  double delta_;
};

inline AlmostAnalyticExtension build_extension(const SmoothBump& bump, int order, double delta) {
  return AlmostAnalyticExtension(bump, order, delta);
}

struct DecayFitResult {
  std::vector<double> ys;
  std::vector<double> sup_values;
  double slope = 0.0;
  double log_constant = 0.0;  // intercept of log sup|dbar| = log C + slope log y
  double r_squared = 0.0;
};

inline void linear_fit(const std::vector<double>& x, const std::vector<double>& y, double& slope, double& intercept,
                       double& r2) {
  const std::size_t n = x.size();
  require(n >= 2 && y.size() == n, "linear_fit: need at least two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  slope = sxy / sxx;
  intercept = my - slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = y[i] - intercept - slope * x[i];
    ss_res += e * e;
  }
  r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
}

// Log-log fit of max_x |dbar phi~(x + iy)| against y on log-spaced ys in [y_lo, y_hi].
inline DecayFitResult fit_dbar_decay(const AlmostAnalyticExtension& ext, double y_lo = 1e-4, double y_hi = 1e-2,
                                     int n_y = 9, int n_x = 2001) {
  require(y_lo > 0 && y_hi > y_lo && n_y >= 3, "fit_dbar_decay: bad y range");
  DecayFitResult r;
  const double s0 = ext.base().lower(), s1 = ext.base().upper();
  std::vector<std::vector<double>> derivs;
  for (int i = 1; i < n_x - 1; ++i) {
    const double x = s0 + (s1 - s0) * i / static_cast<double>(n_x - 1);
    derivs.push_back(ext.base().derivatives(x, static_cast<std::size_t>(ext.order() + 1)));
  }
  std::vector<double> lx, ly;
  for (int k = 0; k < n_y; ++k) {
    const double y = y_lo * std::pow(y_hi / y_lo, k / static_cast<double>(n_y - 1));
    double best = 0;
    for (const auto& d : derivs) best = std::max(best, std::abs(ext.dbar_from(d, y)));
    r.ys.push_back(y);
    r.sup_values.push_back(best);
    lx.push_back(std::log(y));
    ly.push_back(std::log(std::max(best, 1e-300)));
  }
  linear_fit(lx, ly, r.slope, r.log_constant, r.r_squared);
  return r;
}

// ---------------------------------------------------------------------------
// Quadrature

struct HsQuadrature {
  double tolerance = 1e-7;       // target for the summed panel error estimates (sup over probes)
  std::size_t max_nodes = 400000;
  double y_min_factor = 1e-5;    // y_min = y_min_factor * delta
  int top_panels = 8;            // uniform y-panels on [delta, 2 delta]
  bool strict = true;            // throw when the budget runs out before tolerance
};

struct HsNode {
  double x = 0.0;
  double y = 0.0;
  cplx weight = 0.0;  // quadrature weight times dbar phi~(x + iy)
};

struct HsPlan {
  std::vector<HsNode> nodes;
  double error_estimate = 0.0;  // summed panel estimates plus the neglected strip bound
  double tail_bound = 0.0;      // bound for the strip 0 < y < y_min
  double probe_error = 0.0;     // max over probes of |quadrature(lambda) - phi(lambda)|
  bool converged = false;
  std::size_t panels = 0;
  double range_lower = 0.0, range_upper = 0.0;

  // The scalar the plan produces at a real point: it equals phi(lambda) up to quadrature error.
  double scalar(double lambda) const {
    double s = 0.0;
    for (const HsNode& n : nodes) s += (n.weight / cplx(lambda - n.x, -n.y)).real();
    return s * (2.0 / kPi);
  }
};

namespace detail {

// Gauss-Kronrod 15 on [-1, 1]; the odd-indexed nodes form the embedded Gauss 7 rule.
inline constexpr std::array<double, 15> kGK15Nodes = {
    -0.991455371120812639, -0.949107912342758525, -0.864864423359769073, -0.741531185599394440,
    -0.586087235467691130, -0.405845151377397167, -0.207784955007898468, 0.0,
    0.207784955007898468,  0.405845151377397167,  0.586087235467691130,  0.741531185599394440,
    0.864864423359769073,  0.949107912342758525,  0.991455371120812639};
inline constexpr std::array<double, 15> kGK15Weights = {
    0.022935322010529225, 0.063092092629978553, 0.104790010322250184, 0.140653259715525919,
    0.169004726639267903, 0.190350578064785410, 0.204432940075298892, 0.209482141084727828,
    0.204432940075298892, 0.190350578064785410, 0.169004726639267903, 0.140653259715525919,
    0.104790010322250184, 0.063092092629978553, 0.022935322010529225};
inline constexpr std::array<double, 7> kG7Weights = {0.129484966168869693, 0.279705391489276668,
                                                     0.381830050505118945, 0.417959183673469388,
                                                     0.381830050505118945, 0.279705391489276668,
                                                     0.129484966168869693};
inline constexpr std::array<double, 8> kGL8Nodes = {-0.960289856497536232, -0.796666477413626740,
                                                    -0.525532409916328986, -0.183434642495649805,
                                                    0.183434642495649805,  0.525532409916328986,
                                                    0.796666477413626740,  0.960289856497536232};
inline constexpr std::array<double, 8> kGL8Weights = {0.101228536290376259, 0.222381034453374471,
                                                      0.313706645877887287, 0.362683783378361983,
                                                      0.362683783378361983, 0.313706645877887287,
                                                      0.222381034453374471, 0.101228536290376259};

struct YPanel {
  double lo, hi;
  std::vector<double> probes;
};

struct XPanel {
  int yp;
  double xa, xb;
  double err;
  std::vector<HsNode> nodes;  // 15 x 8 Kronrod-weighted nodes
};

struct PanelOrder {
  bool operator()(const XPanel* a, const XPanel* b) const { return a->err < b->err; }
};

}  // namespace detail

// Builds a node set good for every Hermitian matrix with spectrum inside [lo, hi].
inline HsPlan hs_plan(const AlmostAnalyticExtension& ext, double lo, double hi, const HsQuadrature& quad = {}) {
  using namespace detail;
  validate(quad.tolerance > 0.0 && quad.max_nodes > 0 && quad.y_min_factor > 0.0 && quad.y_min_factor < 1.0,
           "hs quadrature: bad tolerance, budget, or y_min");
  require(lo <= hi, "hs_plan: empty spectral range");
  const double delta = ext.delta();
  const double s0 = ext.base().lower(), s1 = ext.base().upper();
  const double y_min = quad.y_min_factor * delta;

  // y-panels
  std::vector<YPanel> yps;
  for (int k = 0; k < quad.top_panels; ++k)
    yps.push_back({delta * (1.0 + static_cast<double>(k) / quad.top_panels),
                   delta * (1.0 + static_cast<double>(k + 1) / quad.top_panels), {}});
  for (double top = delta; top > y_min * (1.0 + 1e-12); top *= 0.5) yps.push_back({std::max(0.5 * top, y_min), top, {}});

  // probe points: the part of [lo, hi] where resolvent values vary, plus the range ends
  const double plo = std::max(lo, s0 - 2.0 * delta), phi = std::min(hi, s1 + 2.0 * delta);
  const double base_step = (s1 - s0) / 1000.0;
  for (auto& yp : yps) {
    std::vector<double>& pr = yp.probes;
    pr.push_back(lo);
    if (hi > lo) pr.push_back(hi);
    if (plo < phi) {
      const double step = std::max(base_step, 0.25 * yp.lo);
      const int count = static_cast<int>(std::ceil((phi - plo) / step));
      for (int i = 0; i <= count; ++i) pr.push_back(plo + (phi - plo) * i / std::max(count, 1));
    }
  }

  // panel evaluation
  std::vector<std::unique_ptr<XPanel>> store;
  auto evaluate = [&](int yp, double xa, double xb) {
    auto p = std::make_unique<XPanel>();
    p->yp = yp;
    p->xa = xa;
    p->xb = xb;
    const YPanel& Y = yps[static_cast<std::size_t>(yp)];
    const double hx = 0.5 * (xb - xa), cx = 0.5 * (xa + xb);
    const double hy = 0.5 * (Y.hi - Y.lo), cy = 0.5 * (Y.hi + Y.lo);
    p->nodes.reserve(120);
    std::array<cplx, 120> g7w{};
    for (int i = 0; i < 15; ++i) {
      const double x = cx + hx * kGK15Nodes[static_cast<std::size_t>(i)];
      std::vector<double> d;
      const bool inside = x > s0 && x < s1;
      if (inside) d = ext.base().derivatives(x, static_cast<std::size_t>(ext.order() + 1));
      for (int j = 0; j < 8; ++j) {
        const double y = cy + hy * kGL8Nodes[static_cast<std::size_t>(j)];
        const cplx f = inside ? ext.dbar_from(d, y) : cplx(0.0);
        const double wy = hy * kGL8Weights[static_cast<std::size_t>(j)];
        p->nodes.push_back({x, y, f * (hx * kGK15Weights[static_cast<std::size_t>(i)] * wy)});
        g7w[static_cast<std::size_t>(i * 8 + j)] =
            (i % 2 == 1) ? f * (hx * kG7Weights[static_cast<std::size_t>(i / 2)] * wy) : cplx(0.0);
      }
    }
    double err = 0.0;
    for (double lam : Y.probes) {
      double diff = 0.0;
      for (std::size_t k = 0; k < p->nodes.size(); ++k) {
        const cplx r = 1.0 / cplx(lam - p->nodes[k].x, -p->nodes[k].y);
        diff += ((p->nodes[k].weight - g7w[k]) * r).real();
      }
      err = std::max(err, std::abs(diff));
    }
    p->err = err * (2.0 / kPi);
    store.push_back(std::move(p));
    return store.back().get();
  };

  std::priority_queue<XPanel*, std::vector<XPanel*>, PanelOrder> heap;
  std::vector<XPanel*> active;
  std::size_t nodes = 0;
  for (int yp = 0; yp < static_cast<int>(yps.size()); ++yp) {
    const double mid = 0.5 * (s0 + s1);
    for (auto [a, b] : {std::pair{s0, mid}, std::pair{mid, s1}}) {
      XPanel* p = evaluate(yp, a, b);
      heap.push(p);
      nodes += p->nodes.size();
    }
  }
  if (nodes > quad.max_nodes)
    throw ComputeError("hs_apply: quadrature budget of " + std::to_string(quad.max_nodes) +
                       " nodes is below the initial panel layout of " + std::to_string(nodes) + " nodes");

  // neglected strip 0 < y < y_min
  HsPlan plan;
  plan.tail_bound = (2.0 / kPi) * (s1 - s0) * ext.decay_constant() * std::pow(y_min, ext.order()) / ext.order();

  auto total_error = [&]() {
    double s = 0.0;
    auto copy = heap;
    while (!copy.empty()) {
      s += copy.top()->err;
      copy.pop();
    }
    return s;
  };
  double total = total_error();
  while (total + plan.tail_bound > quad.tolerance && nodes + 120 <= quad.max_nodes) {
    XPanel* worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst->xa + worst->xb);
    XPanel* left = evaluate(worst->yp, worst->xa, mid);
    XPanel* right = evaluate(worst->yp, mid, worst->xb);
    total += left->err + right->err - worst->err;
    nodes += 120;
    heap.push(left);
    heap.push(right);
    if (heap.size() % 64 == 0) total = total_error();  // resync the running sum
  }
  total = total_error();

  // deterministic node order: sorted by y-panel, then x
  while (!heap.empty()) {
    active.push_back(heap.top());
    heap.pop();
  }
  std::sort(active.begin(), active.end(), [](const XPanel* a, const XPanel* b) {
    return a->yp != b->yp ? a->yp < b->yp : a->xa < b->xa;
  });
  for (const XPanel* p : active)
    for (const HsNode& n : p->nodes)
      if (n.weight != cplx(0.0)) plan.nodes.push_back(n);

  plan.panels = active.size();
  plan.error_estimate = total + plan.tail_bound;
  plan.converged = plan.error_estimate <= quad.tolerance;
  plan.range_lower = lo;
  plan.range_upper = hi;

  // a posteriori check against phi at a coarse set of probe points
  const int checks = 201;
  double worst = 0.0;
  for (int i = 0; i < checks; ++i) {
    const double lam = (plo < phi ? plo + (phi - plo) * i / (checks - 1.0) : lo + (hi - lo) * i / (checks - 1.0));
    worst = std::max(worst, std::abs(plan.scalar(lam) - ext.base()(lam)));
  }
  plan.probe_error = worst;

  if (!plan.converged && quad.strict)
    throw ComputeError("hs_apply: quadrature budget of " + std::to_string(quad.max_nodes) +
                       " nodes exhausted with error estimate " + std::to_string(plan.error_estimate) +
                       " above tolerance " + std::to_string(quad.tolerance));
  return plan;
}

// Gershgorin interval containing the spectrum of a Hermitian matrix.
inline std::pair<double, double> gershgorin_bounds(const Mat& a) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < a.rows(); ++i) {
    const double r = a.row(i).cwiseAbs().sum() - std::abs(a(i, i));
    lo = std::min(lo, a(i, i).real() - r);
    hi = std::max(hi, a(i, i).real() + r);
  }
  return {lo, hi};
}

struct HsResult {
  Mat matrix;
  std::size_t nodes = 0;
  double error_estimate = 0.0;
  double tail_bound = 0.0;
  double probe_error = 0.0;
  bool converged = false;
};

// Sums (2/pi) Re sum_k w_k (A - z_k)^{-1} over the plan's nodes.
// A is reduced once to a real symmetric tridiagonal T = Q* A Q; the upper triangle of
// (T - z)^{-1} is generated column by column from the two continued-fraction sweeps.
inline HsResult hs_apply(const Mat& a, const HsPlan& plan, ParallelFor executor = default_executor()) {
  validate(is_hermitian(a, 1e-10), "hs_apply: operator is not Hermitian");
  const Index n = a.rows();
  HsResult res;
  res.nodes = plan.nodes.size();
  res.error_estimate = plan.error_estimate;
  res.tail_bound = plan.tail_bound;
  res.probe_error = plan.probe_error;
  res.converged = plan.converged;
  if (n == 0) {
    res.matrix = Mat(0, 0);
    return res;
  }

  RVec diag, sub;
  Mat q;
  if (n == 1) {
    diag = RVec::Constant(1, a(0, 0).real());
    sub = RVec(0);
    q = Mat::Identity(1, 1);
  } else {
    Eigen::Tridiagonalization<Mat> tri(a);
    diag = tri.diagonal();
    sub = tri.subDiagonal();
    q = tri.matrixQ();
  }

  const std::size_t count = plan.nodes.size();
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(count, 64));
  std::vector<RMat> partial(chunks);
  executor(chunks, [&](std::size_t c) {
    RMat s = RMat::Zero(n, n);
    Eigen::VectorXcd left(n), right(n);
    RVec cr(n), ci(n);
    const std::size_t begin = count * c / chunks, end = count * (c + 1) / chunks;
    for (std::size_t k = begin; k < end; ++k) {
      const HsNode& node = plan.nodes[k];
      const cplx z(node.x, node.y);
      left(0) = diag(0) - z;
      for (Index i = 1; i < n; ++i) left(i) = (diag(i) - z) - sub(i - 1) * sub(i - 1) / left(i - 1);
      right(n - 1) = diag(n - 1) - z;
      for (Index i = n - 2; i >= 0; --i) right(i) = (diag(i) - z) - sub(i) * sub(i) / right(i + 1);
      const double wr = node.weight.real(), wi = node.weight.imag();
      double* pr = cr.data();
      double* pi = ci.data();
      for (Index j = 0; j < n; ++j) {
        if (j > 0) {
          // column j above the diagonal is column j-1 times -b_{j-1} / r_j
          const cplx f = -sub(j - 1) / right(j);
          const double fr = f.real(), fi = f.imag();
          for (Index i = 0; i < j; ++i) {
            const double a = pr[i], b = pi[i];
            pr[i] = a * fr - b * fi;
            pi[i] = a * fi + b * fr;
          }
        }
        const cplx g = 1.0 / (left(j) + right(j) - (diag(j) - z));
        pr[j] = g.real();
        pi[j] = g.imag();
        double* sc = s.col(j).data();
        for (Index i = 0; i <= j; ++i) sc[i] += wr * pr[i] - wi * pi[i];
      }
    }
    partial[c] = std::move(s);
  });

  RMat total = RMat::Zero(n, n);
  for (const RMat& p : partial) total += p;
  total = total.triangularView<Eigen::Upper>();
  RMat sym = total + total.transpose();
  sym.diagonal() *= 0.5;
  Mat m = (2.0 / kPi) * (q * sym.cast<cplx>() * q.adjoint());
  res.matrix = 0.5 * (m + m.adjoint());
  return res;
}

inline HsResult hs_apply(const DiscreteOperator& op, const AlmostAnalyticExtension& ext, const HsQuadrature& quad = {},
                         ParallelFor executor = default_executor()) {
  validate(op.hermitian(), "hs_apply: operator is not flagged Hermitian");
  const auto [lo, hi] = gershgorin_bounds(op.matrix());
  return hs_apply(op.matrix(), hs_plan(ext, lo, hi, quad), std::move(executor));
}

inline HsResult hs_apply(const Mat& a, const AlmostAnalyticExtension& ext, const HsQuadrature& quad = {},
                         ParallelFor executor = default_executor()) {
  const auto [lo, hi] = gershgorin_bounds(a);
  return hs_apply(a, hs_plan(ext, lo, hi, quad), std::move(executor));
}

// ---------------------------------------------------------------------------
// Finite-volume replacement: (1/L^d) |tr(chi_L phi(H_w) chi_L) - tr(chi_L phi(H_{w,L+pad}) chi_L)|

struct FiniteVolumeOptions {
  double L = 8.0;
  double pad = 15.0;
  double ambient_side = 0.0;  // 0 selects the smallest admissible even integer torus
  int points_per_unit = 4;
  Backend backend = Backend::fourier_spectral;
  bool use_hs = false;  // false: eigendecomposition oracle
  HsQuadrature quad{};
};

struct FiniteVolumeResult {
  double value = 0.0;
  double trace_full = 0.0;
  double trace_restricted = 0.0;
  double ambient_side = 0.0;
};

// sum over states of chi_L of phi(H)_{ii}.
inline double cutoff_trace(const Mat& phi_h, const IndicatorField& chi, int fiber) {
  double t = 0.0;
  for (Index i = 0; i < phi_h.rows(); ++i) t += chi.value(i / fiber) * phi_h(i, i).real() * chi.value(i / fiber);
  return t;
}

inline double cutoff_trace_eigen(const SpectralData& spec, const std::function<double(double)>& f,
                                 const IndicatorField& chi, int fiber) {
  RVec fv(spec.eigenvalues.size());
  for (Index k = 0; k < fv.size(); ++k) fv(k) = f(spec.eigenvalues(k));
  double t = 0.0;
  for (Index i = 0; i < spec.eigenvectors.rows(); ++i) {
    const double c = chi.value(i / fiber);
    if (c == 0.0) continue;
    t += c * c * (spec.eigenvectors.row(i).cwiseAbs2() * fv)(0);
  }
  return t;
}

inline double smallest_ambient_side(double needed) {
  int s = static_cast<int>(std::floor(needed)) + 1;
  return static_cast<double>(s);
}

inline FiniteVolumeResult finite_volume_replacement(const Model& model, const SmoothBump& phi,
                                                    const FiniteVolumeOptions& opt, std::uint64_t seed) {
  const double need = opt.L + opt.pad + 4.0;
  const double amb = opt.ambient_side > 0.0 ? opt.ambient_side : smallest_ambient_side(need);
  require(amb > need, "finite_volume_replacement: ambient torus must be strictly larger than L + pad + 4");
  require(std::abs(amb - std::round(amb)) < 1e-12, "finite_volume_replacement: ambient side must be an integer");
  const Grid grid = Grid::lattice(model.dim(), static_cast<int>(std::lround(amb)), opt.points_per_unit);
  const DisorderRealization omega = sample_realization(model.disorder, amb, seed);
  const DiscreteOperator full = build_H_omega(model.symbol, model.background, model.disorder, omega, grid, opt.backend);
  const DiscreteOperator cut = build_H_omega(model.symbol, model.background, model.disorder,
                                             omega.restricted(opt.L + opt.pad), grid, opt.backend);
  const IndicatorField chi = IndicatorField::centered_box(grid, opt.L);
  const int n = model.fiber();
  FiniteVolumeResult r;
  r.ambient_side = amb;
  if (opt.use_hs) {
    const AlmostAnalyticExtension ext(phi, 2 * model.dim() + 2, 0.5 * (phi.upper() - phi.lower()));
    r.trace_full = cutoff_trace(hs_apply(full, ext, opt.quad).matrix, chi, n);
    r.trace_restricted = cutoff_trace(hs_apply(cut, ext, opt.quad).matrix, chi, n);
  } else {
    auto f = [&](double x) { return phi(x); };
    r.trace_full = cutoff_trace_eigen(eigen_hermitian(full), f, chi, n);
    r.trace_restricted = cutoff_trace_eigen(eigen_hermitian(cut), f, chi, n);
  }
  r.value = std::abs(r.trace_full - r.trace_restricted) / std::pow(opt.L, model.dim());
  return r;
}

}  // namespace diracdos
