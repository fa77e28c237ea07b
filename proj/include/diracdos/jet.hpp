#pragma once

// Truncated Taylor arithmetic. A Jet of order K carries the normalized Taylor
// coefficients c_k = f^(k)(x0) / k!, k = 0..K, of a function around a point.
// Arithmetic on jets propagates all K derivatives exactly up to rounding, which
// is how the smooth bumps and cutoffs below obtain their high derivatives.

#include <cmath>
#include <cstddef>
#include <vector>

namespace diracdos {

class Jet {
 public:
  explicit Jet(std::size_t order, double value = 0.0) : c_(order + 1, 0.0) { c_[0] = value; }

  // The identity function t -> t expanded around x0.
  static Jet variable(std::size_t order, double x0) {
    Jet j(order, x0);
    if (order >= 1) j.c_[1] = 1.0;
    return j;
  }

  std::size_t order() const { return c_.size() - 1; }
  double operator[](std::size_t k) const { return c_[k]; }
  double& operator[](std::size_t k) { return c_[k]; }
  double value() const { return c_[0]; }

  // f^(k)(x0) for k = 0..order.
  std::vector<double> derivatives() const {
    std::vector<double> d(c_.size());
    double fact = 1.0;
    for (std::size_t k = 0; k < c_.size(); ++k) {
      if (k > 0) fact *= static_cast<double>(k);
      d[k] = c_[k] * fact;
    }
    return d;
  }

  Jet& operator+=(const Jet& o) {
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] += o.c_[k];
    return *this;
  }
  Jet& operator-=(const Jet& o) {
    for (std::size_t k = 0; k < c_.size(); ++k) c_[k] -= o.c_[k];
    return *this;
  }
  Jet& operator*=(double s) {
    for (double& v : c_) v *= s;
    return *this;
  }
  Jet& operator+=(double s) {
    c_[0] += s;
    return *this;
  }

  friend Jet operator+(Jet a, const Jet& b) { return a += b; }
  friend Jet operator-(Jet a, const Jet& b) { return a -= b; }
  friend Jet operator*(Jet a, double s) { return a *= s; }
  friend Jet operator*(double s, Jet a) { return a *= s; }
  friend Jet operator+(Jet a, double s) { return a += s; }
  friend Jet operator+(double s, Jet a) { return a += s; }
  friend Jet operator-(double s, const Jet& a) {
    Jet r = a * -1.0;
    r.c_[0] += s;
    return r;
  }
  friend Jet operator-(const Jet& a) { return a * -1.0; }

  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r(a.order());
    for (std::size_t k = 0; k < r.c_.size(); ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i <= k; ++i) s += a.c_[i] * b.c_[k - i];
      r.c_[k] = s;
    }
    return r;
  }

  friend Jet operator/(const Jet& a, const Jet& b) {
    Jet r(a.order());
    for (std::size_t k = 0; k < r.c_.size(); ++k) {
      double s = a.c_[k];
      for (std::size_t i = 1; i <= k; ++i) s -= b.c_[i] * r.c_[k - i];
      r.c_[k] = s / b.c_[0];
    }
    return r;
  }

  friend Jet exp(const Jet& a) {
    // r' = a' r  =>  k r_k = sum_{i=1..k} i a_i r_{k-i}
    Jet r(a.order());
    r.c_[0] = std::exp(a.c_[0]);
    for (std::size_t k = 1; k < r.c_.size(); ++k) {
      double s = 0.0;
      for (std::size_t i = 1; i <= k; ++i) s += static_cast<double>(i) * a.c_[i] * r.c_[k - i];
      r.c_[k] = s / static_cast<double>(k);
    }
    return r;
  }

 private:
  std::vector<double> c_;
};

// exp(-1/t) for t > 0, identically zero (with all derivatives) for t <= 0.
inline Jet flat_exp(const Jet& t) {
  // Below 1/700 every derivative is under 1e-250; skip to avoid inf * 0.
  if (t.value() <= 1.0 / 700.0) return Jet(t.order());
  return exp(-1.0 * (Jet(t.order(), 1.0) / t));
}

// C-infinity step: 0 for r <= 0, 1 for r >= 1, strictly monotone in between.
inline Jet smooth_step(const Jet& r) {
  const std::size_t K = r.order();
  if (r.value() <= 0.0) return Jet(K);
  if (r.value() >= 1.0) return Jet(K, 1.0);
  const Jet a = flat_exp(r);
  const Jet b = flat_exp(1.0 - r);
  return a / (a + b);
}

inline double smooth_step(double r) {
  if (r <= 0.0) return 0.0;
  if (r >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / r);  // underflows cleanly to 0
  const double b = std::exp(-1.0 / (1.0 - r));
  return a / (a + b);
}

// sup |smooth_step'| attained at r = 1/2.
inline constexpr double kSmoothStepMaxSlope = 2.0;

}  // namespace diracdos
