#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "diracdos/common.hpp"

namespace diracdos::cli {

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw ComputeError("sha256: OpenSSL digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for '" + p.string() + "'");
}

struct ManifestEntry {
  std::string name;
  std::size_t bytes = 0;
  std::string sha256;
};

struct RunManifest {
  nlohmann::json config;
  std::string config_sha256;
  std::string tool_version;
  std::string started_utc;
  double wall_clock_seconds = 0.0;
  std::size_t jobs = 1;
  std::vector<ManifestEntry> files;

  nlohmann::json to_json() const {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& e : files) f.push_back({{"name", e.name}, {"bytes", e.bytes}, {"sha256", e.sha256}});
    return {{"tool", "dirac-dos"},
            {"tool_version", tool_version},
            {"config", config},
            {"config_sha256", config_sha256},
            {"started_utc", started_utc},
            {"wall_clock_seconds", wall_clock_seconds},
            {"jobs", jobs},
            {"files", f}};
  }
};

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Re-hashes every listed file; returns the names whose bytes no longer match.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(read_file(dir / "manifest.json"));
  std::vector<std::string> bad;
  for (const auto& f : m.at("files")) {
    const std::string name = f.at("name").get<std::string>();
    std::error_code ec;
    if (!std::filesystem::exists(dir / name, ec) || sha256_hex(read_file(dir / name)) != f.at("sha256").get<std::string>())
      bad.push_back(name);
  }
  return bad;
}

}  // namespace diracdos::cli
