#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "qtat/error.hpp"
#include "qtat/field_io.hpp"
#include "qtat/parallel.hpp"

namespace qtat {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr std::uint32_t kReportVersion = 1;

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256: digest computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(io::slurp(path)); }

/// Record of one CLI invocation: what was asked, what was read and written,
/// and enough to rerun it.
class RunManifest {
 public:
  RunManifest(std::vector<std::string> argv) : argv_(std::move(argv)), start_(std::chrono::steady_clock::now()) {}

  void set_subcommand(std::string s) { subcommand_ = std::move(s); }
  void add_config(const std::string& path) { configs_.push_back(path); }
  void add_input(const std::string& path) { inputs_.push_back(path); }
  void add_output(const std::string& path) { outputs_.push_back(path); }
  /// Output the run intends to write; places the manifest even when the run fails early.
  void declare_output(const std::string& path) {
    if (!path.empty()) declared_.push_back(path);
  }
  void add_seed(std::uint64_t s) { seeds_.push_back(s); }
  void set_parameter(const std::string& key, nlohmann::json v) { parameters_[key] = std::move(v); }
  const std::vector<std::string>& outputs() const { return outputs_; }

  /// Manifest path: explicit, else next to the first output, else the working directory.
  std::string path(const std::string& explicit_path = "") const {
    if (!explicit_path.empty()) return explicit_path;
    if (!outputs_.empty()) return outputs_.front() + ".manifest.json";
    if (!declared_.empty()) return declared_.front() + ".manifest.json";
    return "qtat.manifest.json";
  }

  nlohmann::json to_json(int exit_status, const std::string& error = "") const {
    using nlohmann::json;
    auto digests = [](const std::vector<std::string>& paths) {
      json arr = json::array();
      for (const auto& p : paths) {
        json e{{"path", p}};
        std::error_code ec;
        if (std::filesystem::is_regular_file(p, ec)) {
          e["sha256"] = sha256_file(p);
          e["bytes"] = std::filesystem::file_size(p, ec);
        } else {
          e["missing"] = true;
        }
        arr.push_back(e);
      }
      return arr;
    };
    std::string line;
    for (const auto& a : argv_) line += (line.empty() ? "" : " ") + a;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json j;
    j["tool"] = "qtat";
    j["version"] = kVersion;
    j["formats"] = {{"field", kFieldVersion}, {"space_time", kSpaceTimeVersion}, {"trace", kTraceVersion},
                    {"report", kReportVersion}};
    j["subcommand"] = subcommand_;
    j["command_line"] = line;
    j["argv"] = argv_;
    j["working_directory"] = std::filesystem::current_path().string();
    j["configs"] = digests(configs_);
    j["inputs"] = digests(inputs_);
    j["outputs"] = digests(outputs_);
    j["seeds"] = seeds_;
    j["parameters"] = parameters_.is_null() ? json::object() : parameters_;
    j["threads"] = thread_count();
    j["exit_status"] = exit_status;
    if (!error.empty()) j["error"] = error;
    j["wall_time_seconds"] = wall;
    return j;
  }

  void write(const std::string& path, int exit_status, const std::string& error = "") const {
    io::dump(path, to_json(exit_status, error).dump(2) + "\n");
  }

 private:
  std::vector<std::string> argv_;
  std::string subcommand_;
  std::vector<std::string> configs_, inputs_, outputs_, declared_;
  std::vector<std::uint64_t> seeds_;
  nlohmann::json parameters_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace qtat
