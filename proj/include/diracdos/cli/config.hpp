#pragma once

// Experiment configuration: TOML (or JSON) -> validated, fully defaulted ExperimentConfig.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "diracdos/common.hpp"
#include "diracdos/models.hpp"
#include "diracdos/spectral.hpp"

namespace diracdos::cli {

using json = nlohmann::json;

class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& msg, std::vector<std::string> missing = {}, std::vector<std::string> unknown = {},
              std::vector<std::string> invalid = {})
      : ValidationError(msg), missing(std::move(missing)), unknown(std::move(unknown)), invalid(std::move(invalid)) {}
  std::vector<std::string> missing;
  std::vector<std::string> unknown;
  std::vector<std::string> invalid;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"spectrum", "dos",      "wegner",      "ct",
                                          "bs",       "gre",      "hs-check",    "equivalence",
                                          "self-averaging"};
  return k;
}

inline bool is_kind(const std::string& s) {
  const auto& k = experiment_kinds();
  return std::find(k.begin(), k.end(), s) != k.end();
}

// ---------------------------------------------------------------------------
// Loading

inline json parse_toml_text(const std::string& text, const std::string& source) {
  try {
    const toml::table tbl = toml::parse(text, source);
    std::ostringstream ss;
    ss << toml::json_formatter{tbl};
    return json::parse(ss.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error in " << source << " at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

// .json files are read as JSON, .toml as TOML; anything else tries TOML and then JSON.
inline json load_config_document(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const std::string ext = std::filesystem::path(path).extension().string();
  auto as_json = [&]() {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("JSON parse error in " + path + ": " + e.what());
    }
  };
  if (ext == ".json") return as_json();
  if (ext == ".toml") return parse_toml_text(text, path);
  try {
    return parse_toml_text(text, path);
  } catch (const ConfigError&) {
    return as_json();
  }
}

// ---------------------------------------------------------------------------
// Schema reader: records missing, unknown and invalid keys instead of throwing at the first one.

struct Problems {
  std::vector<std::string> missing, unknown, invalid;
  bool empty() const { return missing.empty() && unknown.empty() && invalid.empty(); }
};

class Section {
 public:
  Section(const json* node, std::string path, Problems* p) : node_(node), path_(std::move(path)), p_(p) {
    if (node_ != nullptr && !node_->is_object()) {
      p_->invalid.push_back(path_ + ": expected a table");
      node_ = nullptr;
    }
  }

  bool present() const { return node_ != nullptr; }
  bool has(const std::string& key) const { return node_ != nullptr && node_->contains(key); }

  Section sub(const std::string& key, bool required) {
    const json* v = fetch(key, required);
    return Section(v, name(key), p_);
  }

  double number(const std::string& key, std::optional<double> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or(0.0);
    if (!v->is_number()) return bad(key, "expected a number"), def.value_or(0.0);
    return v->get<double>();
  }

  std::int64_t integer(const std::string& key, std::optional<std::int64_t> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or(0);
    if (v->is_number_integer()) return v->get<std::int64_t>();
    if (v->is_number_float()) {
      const double d = v->get<double>();
      if (d == std::floor(d) && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
    }
    return bad(key, "expected an integer"), def.value_or(0);
  }

  std::uint64_t uinteger(const std::string& key, std::optional<std::uint64_t> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or(0);
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
    return bad(key, "expected a nonnegative integer"), def.value_or(0);
  }

  bool boolean(const std::string& key, std::optional<bool> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or(false);
    if (!v->is_boolean()) return bad(key, "expected true or false"), def.value_or(false);
    return v->get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or("");
    if (!v->is_string()) return bad(key, "expected a string"), def.value_or("");
    return v->get<std::string>();
  }

  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def = std::nullopt) {
    const json* v = fetch(key, !def.has_value());
    if (v == nullptr) return def.value_or(std::vector<double>{});
    std::vector<double> out;
    if (!v->is_array()) return bad(key, "expected an array of numbers"), def.value_or(std::vector<double>{});
    for (const auto& e : *v) {
      if (!e.is_number()) return bad(key, "expected an array of numbers"), def.value_or(std::vector<double>{});
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::pair<double, double> interval(const std::string& key,
                                     std::optional<std::pair<double, double>> def = std::nullopt) {
    const bool needed = !def.has_value();
    if (!has(key)) {
      fetch(key, needed);
      return def.value_or(std::pair{0.0, 0.0});
    }
    const auto v = numbers(key, std::vector<double>{});
    if (v.size() != 2 || !(v[0] < v[1])) {
      bad(key, "expected [lower, upper] with lower < upper");
      return def.value_or(std::pair{0.0, 1.0});
    }
    return {v[0], v[1]};
  }

  // Non-empty array of [lower, upper] pairs with lower < upper.
  std::vector<std::pair<double, double>> intervals(const std::string& key) {
    const json* v = fetch(key, true);
    std::vector<std::pair<double, double>> out;
    if (v == nullptr) return out;
    const std::string why = "expected a non-empty array of [lower, upper] pairs with lower < upper";
    if (!v->is_array() || v->empty()) return bad(key, why), out;
    for (const auto& e : *v) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number() ||
          !(e[0].get<double>() < e[1].get<double>()))
        return bad(key, why), std::vector<std::pair<double, double>>{};
      out.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
    return out;
  }

  // Complex matrix: array of rows; an entry is a number or a [re, im] pair.
  std::optional<Mat> matrix(const std::string& key, bool required) {
    const json* v = fetch(key, required);
    if (v == nullptr) return std::nullopt;
    auto r = parse_matrix_json(*v);
    if (!r) bad(key, "expected a square matrix: array of rows with number or [re, im] entries");
    return r;
  }

  std::vector<Mat> matrices(const std::string& key) {
    const json* v = fetch(key, true);
    std::vector<Mat> out;
    if (v == nullptr) return out;
    if (!v->is_array() || v->empty()) return bad(key, "expected a non-empty array of matrices"), out;
    for (const auto& m : *v) {
      auto r = parse_matrix_json(m);
      if (!r) return bad(key, "expected an array of square matrices"), std::vector<Mat>{};
      out.push_back(*r);
    }
    return out;
  }

  void fail(const std::string& key, const std::string& why) { bad(key, why); }

  // Any key not consumed is an error.
  void finish() {
    if (node_ == nullptr) return;
    for (auto it = node_->begin(); it != node_->end(); ++it)
      if (!used_.count(it.key())) p_->unknown.push_back(name(it.key()));
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  static json matrix_to_json(const Mat& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(json::array({m(i, j).real(), m(i, j).imag()}));
      rows.push_back(row);
    }
    return rows;
  }

 private:
  static std::optional<Mat> parse_matrix_json(const json& v) {
    if (!v.is_array() || v.empty()) return std::nullopt;
    const std::size_t n = v.size();
    Mat m(static_cast<Index>(n), static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (!v[i].is_array() || v[i].size() != n) return std::nullopt;
      for (std::size_t j = 0; j < n; ++j) {
        const json& e = v[i][j];
        if (e.is_number()) {
          m(static_cast<Index>(i), static_cast<Index>(j)) = e.get<double>();
        } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
          m(static_cast<Index>(i), static_cast<Index>(j)) = cplx(e[0].get<double>(), e[1].get<double>());
        } else {
          return std::nullopt;
        }
      }
    }
    return m;
  }

  const json* fetch(const std::string& key, bool required) {
    used_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) {
      if (required && (node_ != nullptr || path_.empty())) p_->missing.push_back(name(key));
      return nullptr;
    }
    return &node_->at(key);
  }

  void bad(const std::string& key, const std::string& why) { p_->invalid.push_back(name(key) + ": " + why); }

  const json* node_;
  std::string path_;
  Problems* p_;
  std::set<std::string> used_;
};

// ---------------------------------------------------------------------------
// Typed configuration

struct ModelSpec {
  std::string name;  // registry key, or "inline"
  int dimension = 1;
  std::vector<Mat> sigmas;
  Mat S, V0, u_matrix;
  double gap_lower = -1.0, gap_upper = 1.0;
  DisorderParams disorder;
};

struct SpectrumParams {
  int L = 8;
  int points = 0;  // grid points per direction; 0 selects L * points_per_unit
  bool disorder = true;
  std::uint64_t realization = 0;
};

struct DosParams {
  std::string construction = "spatial";  // spatial | periodic | both
  double lower = 0.0, upper = 0.0;
  int bins = 1;
  double L = 0.0;
  double ambient_L = 0.0;
  std::vector<double> phi;  // optional bump support [s0, s1] for the smooth spatial estimate
};

struct WegnerParams {
  double J_lower = 0.0, J_upper = 0.0;
  std::vector<double> widths, Ls;
  bool padded_torus = false;
  double pad = 10.0;
};

struct CtParams {
  int side = 64;
  double E = 3.0;
  std::vector<double> ys{0.25, 0.5, 1.0};
  std::vector<double> distances{10, 14, 18, 22};
  double half_width = 1.0;
  std::vector<double> bound_distances{10, 20};
  double bound_y = 0.5;
  double min_distance = 10.0, E_max = 10.0, Y_max = 2.0;
};

struct BsParams {
  int L = 8;
  std::vector<double> ps{2, 4, 6};
  int instances = 50;
};

struct GreParams {
  int L = 16, Lp = 32;
  double margin = 3.0;
  double ramp = 2.0;
  double E_re = 0.2, E_im = 0.1;
  int instances = 10;
  double negative_margin = 0.25;  // <= 0 disables the negative control
};

struct HsCheckParams {
  int instances = 20;
  int dimension = 80;
  double spectrum_lower = -5.0, spectrum_upper = 5.0;
  std::vector<std::pair<double, double>> bumps{{-1.5, 2.0}, {-1.0, 1.0}, {0.5, 3.0}};
  int order = 0;  // 0 selects 2d + 2
  double delta = 1.0;
  double tolerance = 1e-6;
  std::size_t max_nodes = 400000;
  double y_min_factor = 1e-5;
};

struct EquivalenceParams {
  std::vector<double> Ls;
  double lower = 0.0, upper = 0.0;
  double offset = 10.0;
  std::vector<double> replacement_bump;  // optional [s0, s1] enables the finite-volume replacement table
  double replacement_pad = 15.0;
};

struct SelfAveragingParams {
  double s0 = 0.0, s1 = 0.0;
  std::vector<double> Ls;
};

struct ExperimentConfig {
  std::string kind;
  std::uint64_t seed = 0;
  std::size_t realizations = 0;
  std::size_t jobs = 0;  // 0: not set in the file
  std::string output_dir;
  ModelSpec model;
  int points_per_unit = 4;
  Backend backend = Backend::fourier_spectral;

  SpectrumParams spectrum;
  DosParams dos;
  WegnerParams wegner;
  CtParams ct;
  BsParams bs;
  GreParams gre;
  HsCheckParams hs;
  EquivalenceParams equivalence;
  SelfAveragingParams self_averaging;

  // Fully defaulted echo of everything that influences results (no jobs, no output_dir).
  json canonical;
};

inline Model build_model(const ModelSpec& spec) {
  if (spec.name != "inline") return make_model(spec.name, spec.disorder);
  DiracSymbol symbol(spec.sigmas);
  PeriodicBackground bg = PeriodicBackground::constant(spec.dimension, spec.S, spec.V0);
  DisorderModel dis(spec.dimension, make_law(spec.disorder), spec.disorder.radius,
                    make_single_site(spec.disorder, spec.u_matrix));
  return Model{"inline", "inline model from the experiment config", symbol, bg, dis, spec.gap_lower, spec.gap_upper};
}

// Gap edges may be attained by H_0; eigenvalues within this distance of an edge count as on it.
inline constexpr double kGapEdgeTolerance = 1e-9;

// Ellipticity plus an eigenvalue check of H_0 on a reference torus.
inline void certify_inline_model(const Model& m, int points_per_unit, Backend backend) {
  const auto e = ellipticity_constant(m.symbol, 200);
  validate(e.elliptic, "inline model: the symbol is not elliptic (ellipticity constant " +
                           std::to_string(e.constant) + ")");
  const int side = m.dim() == 1 ? 8 : (m.dim() == 2 ? 4 : 2);
  const Grid g = Grid::lattice(m.dim(), side, points_per_unit);
  require(static_cast<Index>(m.fiber()) * g.sites() <= kMaxDimension,
          "inline model: gap certification grid exceeds the dense dimension cap");
  const RVec ev = eigenvalues_hermitian(build_H0(m.symbol, g, m.background, backend).matrix());
  for (Index i = 0; i < ev.size(); ++i)
    validate(!(ev(i) > m.gap_lower + kGapEdgeTolerance && ev(i) < m.gap_upper - kGapEdgeTolerance),
             "inline model: H_0 has an eigenvalue " + std::to_string(ev(i)) + " inside the declared gap");
}

namespace detail {

inline json vec_json(const std::vector<double>& v) { return json(v); }

inline void read_model(Section& top, ExperimentConfig& c, Problems& p) {
  Section m = top.sub("model", true);
  if (!m.present()) return;
  ModelSpec& s = c.model;
  if (m.has("name")) {
    s.name = m.string("name");
    bool known = false;
    for (const auto& info : list_models()) known = known || info.name == s.name;
    if (!known) m.fail("name", "unknown model '" + s.name + "' (see --list-models)");
    s.dimension = s.name == "dirac2d" ? 2 : 1;
  } else {
    s.name = "inline";
    s.dimension = static_cast<int>(m.integer("dimension"));
    s.sigmas = m.matrices("sigmas");
    const int n = s.sigmas.empty() ? 1 : static_cast<int>(s.sigmas.front().rows());
    s.S = m.matrix("S", false).value_or(Mat::Identity(n, n));
    s.V0 = m.matrix("V0", true).value_or(Mat::Zero(n, n));
    Mat last = Mat::Zero(n, n);
    last(n - 1, n - 1) = 1.0;
    s.u_matrix = m.matrix("u", false).value_or(last);
    const auto gap = m.interval("gap");
    s.gap_lower = gap.first;
    s.gap_upper = gap.second;
    if (s.dimension < 1 || s.dimension > 3) m.fail("dimension", "must be 1, 2 or 3");
    if (!s.sigmas.empty() && static_cast<int>(s.sigmas.size()) != s.dimension)
      m.fail("sigmas", "need exactly `dimension` matrices");
  }
  Section d = m.sub("disorder", false);
  DisorderParams& dp = s.disorder;
  dp.law = d.string("law", dp.law);
  dp.m = d.number("m", dp.m);
  dp.M = d.number("M", dp.M);
  dp.mode = d.number("mode", dp.mode);
  dp.spread = d.number("spread", dp.spread);
  dp.radius = d.number("radius", dp.radius);
  dp.profile = d.string("profile", dp.profile);
  dp.amplitude = d.number("amplitude", dp.amplitude);
  d.finish();
  m.finish();
  (void)p;
}

inline json model_json(const ModelSpec& s) {
  json j;
  j["name"] = s.name;
  if (s.name == "inline") {
    j["dimension"] = s.dimension;
    json sig = json::array();
    for (const Mat& m : s.sigmas) sig.push_back(Section::matrix_to_json(m));
    j["sigmas"] = sig;
    j["S"] = Section::matrix_to_json(s.S);
    j["V0"] = Section::matrix_to_json(s.V0);
    j["u"] = Section::matrix_to_json(s.u_matrix);
    j["gap"] = {s.gap_lower, s.gap_upper};
  }
  const DisorderParams& d = s.disorder;
  j["disorder"] = {{"law", d.law},           {"m", d.m},         {"M", d.M},
                   {"mode", d.mode},         {"spread", d.spread}, {"radius", d.radius},
                   {"profile", d.profile},   {"amplitude", d.amplitude}};
  return j;
}

inline void check_positive_list(Section& s, const std::string& key, const std::vector<double>& v, bool increasing) {
  if (v.empty()) {
    if (s.has(key)) s.fail(key, "must not be empty");
    return;
  }
  for (double x : v)
    if (!(x > 0.0)) return s.fail(key, "entries must be positive");
  if (increasing)
    for (std::size_t i = 1; i < v.size(); ++i)
      if (!(v[i] > v[i - 1])) return s.fail(key, "entries must be strictly increasing");
}

inline void check_integers(Section& s, const std::string& key, const std::vector<double>& v) {
  for (double x : v)
    if (x != std::floor(x)) return s.fail(key, "entries must be integers");
}

inline std::vector<double> read_bump(Section& s, const std::string& key, bool required) {
  if (!required && !s.has(key)) return {};
  const auto iv = s.interval(key);
  return {iv.first, iv.second};
}

}  // namespace detail

// Builds the typed config from a parsed document; `kind_override` comes from the subcommand.
inline ExperimentConfig parse_config(const json& doc, const std::string& kind_override = "",
                                     std::optional<std::uint64_t> seed_override = std::nullopt) {
  using namespace detail;
  Problems p;
  if (!doc.is_object()) throw ConfigError("config root must be a table/object");
  Section top(&doc, "", &p);
  ExperimentConfig c;

  if (kind_override.empty() || top.has("kind")) c.kind = top.string("kind");
  if (!kind_override.empty()) {
    if (!c.kind.empty() && c.kind != kind_override)
      top.fail("kind", "config declares '" + c.kind + "' but the subcommand is '" + kind_override + "'");
    c.kind = kind_override;
  }
  if (!c.kind.empty() && !is_kind(c.kind)) top.fail("kind", "unknown experiment kind '" + c.kind + "'");

  c.seed = top.uinteger("seed");
  if (seed_override) c.seed = *seed_override;
  const bool stochastic = c.kind == "dos" || c.kind == "wegner" || c.kind == "equivalence" ||
                          c.kind == "self-averaging";
  if (stochastic || top.has("realizations")) {
    const auto r = top.integer("realizations");
    if (r < 1 && top.has("realizations")) top.fail("realizations", "must be >= 1");
    c.realizations = static_cast<std::size_t>(std::max<std::int64_t>(r, 0));
  }
  if (top.has("jobs")) {
    const auto j = top.integer("jobs");
    if (j < 1) top.fail("jobs", "must be >= 1");
    c.jobs = static_cast<std::size_t>(std::max<std::int64_t>(j, 1));
  }
  c.output_dir = top.string("output_dir", "");

  read_model(top, c, p);

  Section g = top.sub("grid", false);
  c.points_per_unit = static_cast<int>(g.integer("points_per_unit", 4));
  if (c.points_per_unit < 1) g.fail("points_per_unit", "must be >= 1");
  const std::string backend = g.string("backend", c.kind == "gre" || c.kind == "ct" ? "finite_difference"
                                                                                     : "fourier_spectral");
  try {
    c.backend = parse_backend(backend);
  } catch (const Error& e) {
    g.fail("backend", e.what());
  }
  g.finish();

  // kind sections: only the one matching the kind is allowed
  for (const auto& k : experiment_kinds()) {
    if (k == c.kind) continue;
    if (top.has(k)) {
      top.sub(k, false);
      p.unknown.push_back(k + " (section does not match kind '" + c.kind + "')");
    }
  }

  json params;
  if (c.kind == "spectrum") {
    Section s = top.sub("spectrum", false);
    auto& q = c.spectrum;
    q.L = static_cast<int>(s.integer("L", q.L));
    q.points = static_cast<int>(s.integer("points", q.points));
    q.disorder = s.boolean("disorder", q.disorder);
    q.realization = s.uinteger("realization", q.realization);
    if (q.L < 1) s.fail("L", "must be >= 1");
    if (q.points < 0) s.fail("points", "must be >= 0");
    s.finish();
    params = {{"L", q.L}, {"points", q.points == 0 ? q.L * c.points_per_unit : q.points}, {"disorder", q.disorder},
              {"realization", q.realization}};
  } else if (c.kind == "dos") {
    Section s = top.sub("dos", true);
    auto& q = c.dos;
    q.construction = s.string("construction", q.construction);
    if (q.construction != "spatial" && q.construction != "periodic" && q.construction != "both")
      s.fail("construction", "expected spatial, periodic or both");
    const auto w = s.interval("window");
    q.lower = w.first;
    q.upper = w.second;
    q.bins = static_cast<int>(s.integer("bins", q.bins));
    if (q.bins < 1) s.fail("bins", "must be >= 1");
    q.L = s.number("L");
    q.ambient_L = s.number("ambient_L", 0.0);
    q.phi = read_bump(s, "phi", false);
    if (!(q.L > 0.0) && s.has("L")) s.fail("L", "must be positive");
    s.finish();
    params = {{"construction", q.construction}, {"window", {q.lower, q.upper}}, {"bins", q.bins}, {"L", q.L},
              {"ambient_L", q.ambient_L > 0 ? q.ambient_L : q.L + 8.0}, {"phi", q.phi}};
  } else if (c.kind == "wegner") {
    Section s = top.sub("wegner", true);
    auto& q = c.wegner;
    const auto J = s.interval("J");
    q.J_lower = J.first;
    q.J_upper = J.second;
    q.widths = s.numbers("widths");
    q.Ls = s.numbers("Ls");
    q.padded_torus = s.boolean("padded_torus", q.padded_torus);
    q.pad = s.number("pad", q.pad);
    check_positive_list(s, "widths", q.widths, false);
    check_positive_list(s, "Ls", q.Ls, false);
    check_integers(s, "Ls", q.Ls);
    s.finish();
    params = {{"J", {q.J_lower, q.J_upper}}, {"widths", q.widths}, {"Ls", q.Ls}, {"padded_torus", q.padded_torus},
              {"pad", q.pad}};
  } else if (c.kind == "ct") {
    Section s = top.sub("ct", false);
    auto& q = c.ct;
    q.side = static_cast<int>(s.integer("side", q.side));
    q.E = s.number("E", q.E);
    q.ys = s.numbers("ys", q.ys);
    q.distances = s.numbers("distances", q.distances);
    q.half_width = s.number("half_width", q.half_width);
    q.bound_distances = s.numbers("bound_distances", q.bound_distances);
    q.bound_y = s.number("bound_y", q.bound_y);
    q.min_distance = s.number("min_distance", q.min_distance);
    q.E_max = s.number("E_max", q.E_max);
    q.Y_max = s.number("Y_max", q.Y_max);
    if (q.side < 1) s.fail("side", "must be >= 1");
    check_positive_list(s, "distances", q.distances, true);
    check_positive_list(s, "bound_distances", q.bound_distances, true);
    s.finish();
    params = {{"side", q.side},       {"E", q.E},
              {"ys", q.ys},           {"distances", q.distances},
              {"half_width", q.half_width}, {"bound_distances", q.bound_distances},
              {"bound_y", q.bound_y}, {"min_distance", q.min_distance},
              {"E_max", q.E_max},     {"Y_max", q.Y_max}};
  } else if (c.kind == "bs") {
    Section s = top.sub("bs", false);
    auto& q = c.bs;
    q.L = static_cast<int>(s.integer("L", q.L));
    q.ps = s.numbers("p", q.ps);
    q.instances = static_cast<int>(s.integer("instances", q.instances));
    if (q.L < 1) s.fail("L", "must be >= 1");
    if (q.instances < 1) s.fail("instances", "must be >= 1");
    for (double x : q.ps)
      if (x < 2.0) s.fail("p", "entries must be >= 2");
    s.finish();
    params = {{"L", q.L}, {"p", q.ps}, {"instances", q.instances}};
  } else if (c.kind == "gre") {
    Section s = top.sub("gre", false);
    auto& q = c.gre;
    q.L = static_cast<int>(s.integer("L", q.L));
    q.Lp = static_cast<int>(s.integer("Lp", q.Lp));
    q.margin = s.number("margin", q.margin);
    q.ramp = s.number("ramp", q.ramp);
    const auto E = s.numbers("E", std::vector<double>{q.E_re, q.E_im});
    if (E.size() != 2) s.fail("E", "expected [re, im]");
    else {
      q.E_re = E[0];
      q.E_im = E[1];
    }
    q.instances = static_cast<int>(s.integer("instances", q.instances));
    q.negative_margin = s.number("negative_margin", q.negative_margin);
    if (q.L < 1 || q.Lp < q.L) s.fail("Lp", "need 1 <= L <= Lp");
    if (!(q.ramp > 0.0)) s.fail("ramp", "must be positive");
    if (q.instances < 1) s.fail("instances", "must be >= 1");
    s.finish();
    params = {{"L", q.L},         {"Lp", q.Lp},           {"margin", q.margin},
              {"ramp", q.ramp},   {"E", {q.E_re, q.E_im}}, {"instances", q.instances},
              {"negative_margin", q.negative_margin}};
  } else if (c.kind == "hs-check") {
    Section s = top.sub("hs-check", false);
    auto& q = c.hs;
    q.instances = static_cast<int>(s.integer("instances", q.instances));
    q.dimension = static_cast<int>(s.integer("dimension", q.dimension));
    const auto sp = s.interval("spectrum", std::pair{q.spectrum_lower, q.spectrum_upper});
    q.spectrum_lower = sp.first;
    q.spectrum_upper = sp.second;
    if (s.has("bumps")) q.bumps = s.intervals("bumps");
    q.order = static_cast<int>(s.integer("order", 0));
    q.delta = s.number("delta", q.delta);
    q.tolerance = s.number("tolerance", q.tolerance);
    q.max_nodes = static_cast<std::size_t>(s.integer("max_nodes", static_cast<std::int64_t>(q.max_nodes)));
    q.y_min_factor = s.number("y_min_factor", q.y_min_factor);
    if (q.instances < 1) s.fail("instances", "must be >= 1");
    if (q.dimension < 1 || q.dimension > 200) s.fail("dimension", "must lie in 1..200");
    s.finish();
    if (q.order == 0) q.order = 2 * c.model.dimension + 2;
    json bumps = json::array();
    for (const auto& [a, b] : q.bumps) bumps.push_back({a, b});
    params = {{"instances", q.instances}, {"dimension", q.dimension}, {"spectrum", {q.spectrum_lower, q.spectrum_upper}},
              {"bumps", bumps},           {"order", q.order},         {"delta", q.delta},
              {"tolerance", q.tolerance}, {"max_nodes", q.max_nodes}, {"y_min_factor", q.y_min_factor}};
  } else if (c.kind == "equivalence") {
    Section s = top.sub("equivalence", true);
    auto& q = c.equivalence;
    q.Ls = s.numbers("Ls");
    const auto w = s.interval("window");
    q.lower = w.first;
    q.upper = w.second;
    q.offset = s.number("offset", q.offset);
    q.replacement_bump = read_bump(s, "replacement_bump", false);
    q.replacement_pad = s.number("replacement_pad", q.replacement_pad);
    check_positive_list(s, "Ls", q.Ls, true);
    check_integers(s, "Ls", q.Ls);
    s.finish();
    params = {{"Ls", q.Ls},
              {"window", {q.lower, q.upper}},
              {"offset", q.offset},
              {"replacement_bump", q.replacement_bump},
              {"replacement_pad", q.replacement_pad}};
  } else if (c.kind == "self-averaging") {
    Section s = top.sub("self-averaging", true);
    auto& q = c.self_averaging;
    const auto b = s.interval("phi");
    q.s0 = b.first;
    q.s1 = b.second;
    q.Ls = s.numbers("Ls");
    check_positive_list(s, "Ls", q.Ls, true);
    check_integers(s, "Ls", q.Ls);
    s.finish();
    params = {{"phi", {q.s0, q.s1}}, {"Ls", q.Ls}};
  }
  top.finish();

  if (!p.empty()) {
    std::ostringstream msg;
    msg << "invalid configuration:";
    if (!p.missing.empty()) {
      msg << " missing fields [";
      for (std::size_t i = 0; i < p.missing.size(); ++i) msg << (i ? ", " : "") << p.missing[i];
      msg << "];";
    }
    if (!p.unknown.empty()) {
      msg << " unknown keys [";
      for (std::size_t i = 0; i < p.unknown.size(); ++i) msg << (i ? ", " : "") << p.unknown[i];
      msg << "];";
    }
    for (const auto& e : p.invalid) msg << " " << e << ";";
    throw ConfigError(msg.str(), p.missing, p.unknown, p.invalid);
  }

  // physical invariants, checked by building the model once
  try {
    const Model m = build_model(c.model);
    if (c.model.name == "inline") certify_inline_model(m, c.points_per_unit, c.backend);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("invalid model: ") + e.what(), {}, {}, {std::string("model: ") + e.what()});
  }

  c.canonical = {{"kind", c.kind},
                 {"seed", c.seed},
                 {"realizations", c.realizations},
                 {"model", model_json(c.model)},
                 {"grid", {{"points_per_unit", c.points_per_unit}, {"backend", to_string(c.backend)}}},
                 {c.kind, params}};
  return c;
}

}  // namespace diracdos::cli
