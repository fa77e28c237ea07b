#pragma once

// Named model registry.

#include <string>
#include <utility>
#include <vector>

#include "diracdos/disorder.hpp"
#include "diracdos/operator_core.hpp"

namespace diracdos {

struct DisorderParams {
  std::string law = "uniform";
  double m = 0.0;
  double M = 1.0;
  double mode = 0.5;
  double spread = 1.0;
  double radius = 0.25;
  std::string profile = "cos2";
  double amplitude = 1.6;
};

struct Model {
  std::string name;
  std::string description;
  DiracSymbol symbol;
  PeriodicBackground background;
  DisorderModel disorder;
  double gap_lower;  // B_-
  double gap_upper;  // B_+

  int dim() const { return symbol.dim(); }
  int fiber() const { return symbol.fiber(); }
  bool inside_gap(double a, double b) const { return a > gap_lower && b < gap_upper && a <= b; }
};

struct ModelInfo {
  std::string name;
  std::string description;
};

inline std::vector<ModelInfo> list_models() {
  return {
      {"dirac1d", "d=1, n=2: sigma_1 = Pauli-X, S = I, V0 = Pauli-Z; gap (-1, 1); u = A cos^2 profile times diag(0,1)"},
      {"dirac2d",
       "d=2, n=2: sigma = (Pauli-X, Pauli-Y), S = I, V0 = Pauli-Z; gap (-1, 1); u = A cos^2 profile times diag(0,1)"},
  };
}

inline CouplingLaw make_law(const DisorderParams& p) {
  if (p.law == "uniform") return CouplingLaw::uniform(p.m, p.M);
  if (p.law == "truncated_triangular") return CouplingLaw::truncated_triangular(p.m, p.M, p.mode, p.spread);
  throw ValidationError("unknown coupling law '" + p.law + "' (expected uniform or truncated_triangular)");
}

inline SingleSite make_single_site(const DisorderParams& p, const Mat& matrix) {
  if (p.profile == "cos2") return SingleSite::cos2(p.amplitude, matrix);
  if (p.profile == "bump") return SingleSite::bump(p.amplitude, matrix);
  throw ValidationError("unknown single-site profile '" + p.profile + "' (expected cos2 or bump)");
}

inline Model make_model(const std::string& name, const DisorderParams& params = {}) {
  Mat lower = Mat::Zero(2, 2);
  lower(1, 1) = 1.0;
  if (name == "dirac1d") {
    return Model{name,
                 list_models()[0].description,
                 DiracSymbol({pauli_x()}),
                 PeriodicBackground::constant(1, Mat::Identity(2, 2), pauli_z()),
                 DisorderModel(1, make_law(params), params.radius, make_single_site(params, lower)),
                 -1.0,
                 1.0};
  }
  if (name == "dirac2d") {
    return Model{name,
                 list_models()[1].description,
                 DiracSymbol({pauli_x(), pauli_y()}),
                 PeriodicBackground::constant(2, Mat::Identity(2, 2), pauli_z()),
                 DisorderModel(2, make_law(params), params.radius, make_single_site(params, lower)),
                 -1.0,
                 1.0};
  }
  throw ValidationError("unknown model '" + name + "'; run --list-models for the registry");
}

}  // namespace diracdos
