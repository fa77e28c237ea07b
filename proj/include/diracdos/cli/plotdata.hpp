#pragma once

// Long-format CSV tables. Every file starts with a `# config_sha256: <hex>` comment line,
// followed by a header row and one row per record. Doubles are written with %.17g so a
// reader recovers the exact binary value.

#include <cstdint>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "diracdos/dos.hpp"
#include "diracdos/estimates.hpp"

namespace diracdos::cli {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }

class CsvTable {
 public:
  CsvTable(std::string name, std::vector<std::string> columns) : name_(std::move(name)), columns_(std::move(columns)) {}

  template <class... Ts>
  void row(const Ts&... values) {
    static_assert(sizeof...(Ts) > 0);
    std::vector<std::string> r{fmt(values)...};
    require(r.size() == columns_.size(), "CsvTable " + name_ + ": row width does not match the header");
    rows_.push_back(std::move(r));
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t size() const { return rows_.size(); }

  std::string render(const std::string& config_digest) const {
    std::string out = "# config_sha256: " + config_digest + "\n";
    append_line(out, columns_);
    for (const auto& r : rows_) append_line(out, r);
    return out;
  }

 private:
  static void append_line(std::string& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  }

  std::string name_;
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

// ---------------------------------------------------------------------------
// Tables for the library report types

inline CsvTable dos_table(const std::string& name, const DOSEstimate& e) {
  CsvTable t(name, {"bin_lo", "bin_hi", "mean", "stderr"});
  for (std::size_t b = 0; b < e.mean.size(); ++b) t.row(e.edges[b], e.edges[b + 1], e.mean[b], e.stderr_[b]);
  return t;
}

inline CsvTable wegner_table(const WegnerReport& rep) {
  CsvTable t("wegner.csv", {"L", "a", "b", "width", "mean_count", "ratio", "stderr"});
  for (const auto& c : rep.cells) t.row(c.L, c.a, c.b, c.width, c.mean_count, c.ratio, c.stderr_);
  return t;
}

// One row per (L, width) cell with the realization range it aggregates.
inline CsvTable wegner_cells_table(const WegnerReport& rep, std::uint64_t seed) {
  CsvTable t("wegner_cells.csv",
             {"base_seed", "realization_first", "realization_last", "L", "a", "b", "count_mean", "count_var", "ratio"});
  const std::uint64_t last = rep.n_realizations == 0 ? 0 : rep.n_realizations - 1;
  for (const auto& c : rep.cells)
    t.row(seed, std::uint64_t{0}, last, c.L, c.a, c.b, c.mean_count, c.count_variance, c.ratio);
  return t;
}

inline CsvTable ct_decay_table(const DecayFit& fit) {
  CsvTable t("ct_decay.csv", {"y", "a", "op_norm", "tr_norm", "log_tr_norm"});
  for (const auto& line : fit.lines)
    for (std::size_t k = 0; k < fit.distances.size(); ++k)
      t.row(line.y, fit.distances[k], line.operator_norms[k], line.trace_norms[k], std::log(line.trace_norms[k]));
  return t;
}

inline CsvTable ct_fit_table(const DecayFit& fit) {
  CsvTable t("ct_fit.csv", {"y", "slope", "intercept", "r_squared", "op_slope", "op_intercept", "op_r_squared"});
  for (const auto& l : fit.lines) t.row(l.y, l.slope, l.intercept, l.r_squared, l.op_slope, l.op_intercept, l.op_r_squared);
  return t;
}

inline CsvTable equivalence_table(const EquivalenceStudy& st) {
  CsvTable t("equivalence.csv", {"L", "spatial_mean", "spatial_stderr", "periodic_mean", "periodic_stderr", "difference",
                                 "difference_stderr", "own_volume_difference"});
  for (const auto& r : st.rows)
    t.row(r.L, r.spatial_mean, r.spatial_stderr, r.periodic_mean, r.periodic_stderr, r.difference, r.difference_stderr,
          r.own_volume_difference);
  return t;
}

inline CsvTable self_averaging_table(const SelfAveragingReport& rep) {
  CsvTable t("self_averaging.csv", {"L", "mean", "variance"});
  for (const auto& r : rep.rows) t.row(r.L, r.mean, r.variance);
  return t;
}

}  // namespace diracdos::cli
