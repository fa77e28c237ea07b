#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "diracdos/cli/runner.hpp"

using namespace diracdos;
using namespace diracdos::cli;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("diracdos_expcli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

fs::path write_text(const std::string& name, const std::string& text) {
  const fs::path p = scratch() / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const std::string tag = std::to_string(counter++);
  const fs::path o = scratch() / ("stdout_" + tag), e = scratch() / ("stderr_" + tag);
  const std::string cmd = env + (env.empty() ? "" : " ") + "\"" DIRACDOS_CLI_PATH "\" " + args + " > \"" + o.string() +
                          "\" 2> \"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(o);
  r.err = read_file(e);
  return r;
}

std::string config_path(const std::string& name) { return std::string(DIRACDOS_SOURCE_DIR) + "/configs/" + name; }

std::vector<std::string> csv_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

const char* kSmallDos = R"(
kind = "dos"
seed = 5
realizations = 8

[model]
name = "dirac1d"

[dos]
construction = "both"
window = [0.6, 0.98]
bins = 3
L = 8
)";

}  // namespace

// ---------------------------------------------------------------------------
// End-to-end runs

TEST(Cli, SpectrumMatchesDispersionOracle) {
  const fs::path out = scratch() / "spectrum";
  const auto r = run_cli("run --config \"" + config_path("spectrum.toml") + "\" --out \"" + out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = csv_lines(out / "eigenvalues.csv");
  ASSERT_EQ(lines[1], "index,eigenvalue");
  std::vector<double> got;
  for (std::size_t i = 2; i < lines.size(); ++i) got.push_back(std::stod(lines[i].substr(lines[i].find(',') + 1)));
  std::vector<double> want;
  for (int k = -31; k <= 32; ++k) {
    const double p = kPi * k / 4.0;
    want.push_back(std::sqrt(p * p + 1.0));
    want.push_back(-std::sqrt(p * p + 1.0));
  }
  std::sort(want.begin(), want.end());
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10) << i;
  const auto summary = json::parse(read_file(out / "summary.json"));
  EXPECT_EQ(summary["results"]["eigenvalues_in_gap"], 0);
}

TEST(Cli, EmptyConfigExitsTwoListingMissingFields) {
  const auto p = write_text("empty.toml", "");
  const auto r = run_cli("run --config \"" + p.string() + "\" --out \"" + (scratch() / "empty").string() + "\"");
  EXPECT_EQ(r.code, 2);
  const auto err = json::parse(r.err).at("error");
  EXPECT_EQ(err["type"], "config");
  const auto missing = err["missing"].get<std::vector<std::string>>();
  for (const char* f : {"kind", "seed", "model"})
    EXPECT_NE(std::find(missing.begin(), missing.end(), f), missing.end()) << f;
  EXPECT_FALSE(fs::exists(scratch() / "empty"));
}

TEST(Cli, RerunsAreByteIdenticalAcrossParallelism) {
  const auto p = write_text("small_dos.toml", kSmallDos);
  std::vector<fs::path> dirs;
  for (const std::string jobs : {"1", "1", "3"}) {
    fs::path d = scratch() / ("rerun_" + std::to_string(dirs.size()));
    const auto r = run_cli("dos --config \"" + p.string() + "\" --jobs " + jobs + " --out \"" + d.string() + "\"");
    ASSERT_EQ(r.code, 0) << r.err;
    dirs.push_back(d);
  }
  const auto m0 = json::parse(read_file(dirs[0] / "manifest.json"));
  ASSERT_GE(m0["files"].size(), 3u);
  for (std::size_t k = 1; k < dirs.size(); ++k) {
    const auto mk = json::parse(read_file(dirs[k] / "manifest.json"));
    EXPECT_EQ(mk["files"], m0["files"]);
    EXPECT_EQ(mk["config_sha256"], m0["config_sha256"]);
    for (const auto& f : m0["files"]) {
      const std::string name = f["name"];
      EXPECT_EQ(read_file(dirs[k] / name), read_file(dirs[0] / name)) << name;
    }
  }
}

TEST(Cli, ManifestDigestsMatchAndEveryFileCarriesConfigDigest) {
  const fs::path out = scratch() / "ct";
  const auto r = run_cli("run --config \"" + config_path("ct.toml") + "\" --out \"" + out.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(verify_manifest(out).empty());
  const auto man = json::parse(read_file(out / "manifest.json"));
  const std::string digest = man["config_sha256"];
  EXPECT_EQ(digest.size(), 64u);
  EXPECT_EQ(man["tool_version"], kToolVersion);
  EXPECT_GE(man["wall_clock_seconds"].get<double>(), 0.0);
  std::set<std::string> listed;
  for (const auto& f : man["files"]) listed.insert(f["name"].get<std::string>());
  for (const auto& entry : fs::directory_iterator(out)) {
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    EXPECT_TRUE(listed.count(name)) << name << " is not listed in the manifest";
    if (entry.path().extension() == ".csv") {
      EXPECT_EQ(csv_lines(entry.path())[0], "# config_sha256: " + digest);
    }
  }
  EXPECT_EQ(json::parse(read_file(out / "summary.json"))["config_sha256"], digest);

  // tampering is detected
  std::ofstream(out / "ct_decay.csv", std::ios::app) << "0,0,0,0,0\n";
  EXPECT_EQ(verify_manifest(out), std::vector<std::string>{"ct_decay.csv"});
}

TEST(Cli, PlotDataSchemas) {
  const auto wcfg = write_text("w.toml", R"(
kind = "wegner"
seed = 3
realizations = 4
[model]
name = "dirac1d"
[wegner]
J = [0.7, 0.95]
widths = [0.05, 0.1]
Ls = [8]
)");
  const fs::path w = scratch() / "schema_w";
  ASSERT_EQ(run_cli("run --config \"" + wcfg.string() + "\" --out \"" + w.string() + "\"").code, 0);
  EXPECT_EQ(csv_lines(w / "wegner.csv")[1], "L,a,b,width,mean_count,ratio,stderr");
  EXPECT_EQ(csv_lines(w / "wegner.csv").size(), 4u);
  EXPECT_EQ(csv_lines(w / "wegner_cells.csv")[1],
            "base_seed,realization_first,realization_last,L,a,b,count_mean,count_var,ratio");

  const fs::path c = scratch() / "schema_ct";
  ASSERT_EQ(run_cli("run --config \"" + config_path("ct.toml") + "\" --out \"" + c.string() + "\"").code, 0);
  const auto ct = csv_lines(c / "ct_decay.csv");
  EXPECT_EQ(ct[1], "y,a,op_norm,tr_norm,log_tr_norm");
  EXPECT_EQ(ct.size(), 2u + 3u * 4u);

  const auto dcfg = write_text("d.toml", kSmallDos);
  const fs::path d = scratch() / "schema_dos";
  ASSERT_EQ(run_cli("run --config \"" + dcfg.string() + "\" --out \"" + d.string() + "\"").code, 0);
  for (const char* f : {"dos_spatial.csv", "dos_periodic.csv"}) {
    const auto lines = csv_lines(d / f);
    EXPECT_EQ(lines[1], "bin_lo,bin_hi,mean,stderr");
    EXPECT_EQ(lines.size(), 2u + 3u);
  }
  const auto meta = json::parse(read_file(d / "summary.json"))["results"];
  for (const char* k : {"model_sha256", "base_seed", "L", "construction"}) EXPECT_TRUE(meta.contains(k)) << k;
}

TEST(Cli, UnknownKeysAreRejected) {
  const auto p = write_text("unknown.toml", "kind = \"bs\"\nseed = 1\nextra = 2\n[model]\nname = \"dirac1d\"\n[bs]\nL = 8\nq = 1\n");
  const auto r = run_cli("run --config \"" + p.string() + "\" --out \"" + (scratch() / "u").string() + "\"");
  EXPECT_EQ(r.code, 2);
  const auto unknown = json::parse(r.err)["error"]["unknown"].get<std::vector<std::string>>();
  EXPECT_EQ(unknown, (std::vector<std::string>{"bs.q", "extra"}));
}

TEST(Cli, JsonFallback) {
  const std::string text = R"({"kind": "bs", "seed": 9, "model": {"name": "dirac1d"}, "bs": {"instances": 3}})";
  for (const char* name : {"fallback.json", "fallback.cfg"}) {
    const auto p = write_text(name, text);
    const fs::path out = scratch() / (std::string("fb_") + name);
    const auto r = run_cli("run --config \"" + p.string() + "\" --out \"" + out.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(csv_lines(out / "bs.csv").size(), 2u + 3u * 3u);
  }
  const auto bad = write_text("broken.json", "{\"kind\": ");
  EXPECT_EQ(run_cli("run --config \"" + bad.string() + "\"").code, 2);
}

TEST(Cli, PreconditionFailureExitsFour) {
  const auto p = write_text("gre_bad.toml", "kind = \"gre\"\nseed = 1\n[model]\nname = \"dirac1d\"\n[gre]\nmargin = 2.0\ninstances = 1\n");
  const auto r = run_cli("run --config \"" + p.string() + "\" --out \"" + (scratch() / "g").string() + "\"");
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(json::parse(r.err)["error"]["type"], "precondition");
}

TEST(Cli, EnvironmentParallelismDefault) {
  const auto p = write_text("env.toml", kSmallDos);
  const fs::path out = scratch() / "env";
  auto r = run_cli("run --config \"" + p.string() + "\" --out \"" + out.string() + "\"", "DIRAC_DOS_JOBS=2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(read_file(out / "manifest.json"))["jobs"], 2);
  r = run_cli("run --config \"" + p.string() + "\" --jobs 3 --out \"" + out.string() + "\"", "DIRAC_DOS_JOBS=2");
  EXPECT_EQ(json::parse(read_file(out / "manifest.json"))["jobs"], 3);
  r = run_cli("run --config \"" + p.string() + "\" --out \"" + out.string() + "\"", "DIRAC_DOS_JOBS=zero");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, ListModelsAndUsage) {
  const auto r = run_cli("--list-models");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("dirac1d"), std::string::npos);
  EXPECT_NE(r.out.find("dirac2d"), std::string::npos);
  EXPECT_NE(run_cli("").code, 0);
  EXPECT_NE(run_cli("spectrum").code, 0);
}

// ---------------------------------------------------------------------------
// In-process config and plumbing

TEST(Config, DefaultsAndCanonicalEcho) {
  const json doc = parse_toml_text("kind = \"gre\"\nseed = 4\njobs = 3\noutput_dir = \"x\"\n[model]\nname = \"dirac1d\"\n",
                                   "inline");
  const auto c = parse_config(doc);
  EXPECT_EQ(c.gre.L, 16);
  EXPECT_EQ(c.gre.Lp, 32);
  EXPECT_EQ(c.gre.margin, 3.0);
  EXPECT_EQ(c.backend, Backend::finite_difference);
  EXPECT_EQ(c.jobs, 3u);
  EXPECT_FALSE(c.canonical.contains("jobs"));
  EXPECT_FALSE(c.canonical.contains("output_dir"));
  EXPECT_EQ(c.canonical["gre"]["instances"], 10);

  // digest ignores jobs and output_dir, follows the seed
  const json doc2 = parse_toml_text("kind = \"gre\"\nseed = 4\n[model]\nname = \"dirac1d\"\n", "inline");
  EXPECT_EQ(config_digest(parse_config(doc2)), config_digest(c));
  EXPECT_NE(config_digest(parse_config(doc2, "", 5)), config_digest(c));
}

TEST(Config, InvalidValuesAreCollected) {
  const json doc = parse_toml_text(R"(
kind = "wegner"
seed = -1
realizations = 0
[model]
name = "nope"
[wegner]
J = [0.9, 0.7]
widths = [-0.1]
Ls = [8.5]
)",
                                   "inline");
  try {
    parse_config(doc);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_GE(e.invalid.size(), 6u) << e.what();
  }
}

TEST(Config, InlineModelGapIsCertified) {
  const std::string ok = R"({"kind": "spectrum", "seed": 1, "model": {"dimension": 1, "sigmas": [[[0, 1], [1, 0]]],
      "V0": [[1, 0], [0, -1]], "gap": [-1, 1]}})";
  const auto c = parse_config(json::parse(ok));
  EXPECT_EQ(c.model.name, "inline");
  EXPECT_EQ(c.canonical["model"]["gap"], json::array({-1.0, 1.0}));
  const std::string bad = R"({"kind": "spectrum", "seed": 1, "model": {"dimension": 1, "sigmas": [[[0, 1], [1, 0]]],
      "V0": [[0.5, 0], [0, -0.5]], "gap": [-1, 1]}})";
  EXPECT_THROW(parse_config(json::parse(bad)), ConfigError);
  const std::string singular = R"({"kind": "spectrum", "seed": 1, "model": {"dimension": 1, "sigmas": [[[1, 0], [0, 0]]],
      "V0": [[1, 0], [0, -1]], "gap": [-0.5, 0.5]}})";
  EXPECT_THROW(parse_config(json::parse(singular)), ConfigError);
  const std::string complex_entries = R"({"kind": "spectrum", "seed": 1, "model": {"dimension": 1,
      "sigmas": [[[0, [0, -1]], [[0, 1], 0]]], "V0": [[1, 0], [0, -1]], "gap": [-1, 1]}})";
  EXPECT_NO_THROW(parse_config(json::parse(complex_entries)));
}

TEST(Config, SubcommandMustAgreeWithKind) {
  const json doc = json::parse(R"({"kind": "bs", "seed": 1, "model": {"name": "dirac1d"}})");
  EXPECT_THROW(parse_config(doc, "ct"), ConfigError);
  EXPECT_EQ(parse_config(doc, "bs").kind, "bs");
  const json no_kind = json::parse(R"({"seed": 1, "model": {"name": "dirac1d"}})");
  EXPECT_EQ(parse_config(no_kind, "ct").kind, "ct");
}

TEST(Config, HsCheckBumpList) {
  const auto ok = parse_config(parse_toml_text(
      "kind = \"hs-check\"\nseed = 1\n[model]\nname = \"dirac1d\"\n[\"hs-check\"]\nbumps = [[0, 1], [-2, 2.5]]\n", "t"));
  ASSERT_EQ(ok.hs.bumps.size(), 2u);
  EXPECT_EQ(ok.hs.bumps[1], std::make_pair(-2.0, 2.5));
  EXPECT_EQ(ok.hs.order, 4);
  for (const char* bad : {"[[1, 0]]", "[]", "[[0, 1, 2]]", "[0, 1]"}) {
    const std::string text =
        std::string("kind = \"hs-check\"\nseed = 1\n[model]\nname = \"dirac1d\"\n[\"hs-check\"]\nbumps = ") + bad + "\n";
    EXPECT_THROW(parse_config(parse_toml_text(text, "t")), ConfigError) << bad;
  }
}

TEST(Config, TomlErrorsCarryLine) {
  try {
    parse_toml_text("kind = \"bs\"\nseed = = 1\n", "broken.toml");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(ThreadPool, CoversEveryCellOnceAndPropagatesErrors) {
  for (std::size_t jobs : {1u, 2u, 5u}) {
    std::vector<std::atomic<int>> hits(37);
    thread_pool(jobs)(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  EXPECT_THROW(thread_pool(3)(10, [](std::size_t i) {
                 if (i == 4) throw ComputeError("cell 4");
               }),
               ComputeError);
}

TEST(PlotData, RoundTripFormattingAndWidthCheck) {
  CsvTable t("t.csv", {"x", "n", "flag"});
  const double x = 0.1 + 0.2;
  t.row(x, std::int64_t{-3}, true);
  const std::string s = t.render("abc");
  EXPECT_EQ(s.substr(0, s.find('\n')), "# config_sha256: abc");
  const std::string row = s.substr(s.rfind("x,n,flag\n") + 9);
  EXPECT_EQ(std::stod(row.substr(0, row.find(','))), x);
  EXPECT_EQ(row.substr(row.find(',')), ",-3,1\n");
  EXPECT_THROW(t.row(1.0, 2.0), PreconditionError);
}

TEST(Manifest, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
