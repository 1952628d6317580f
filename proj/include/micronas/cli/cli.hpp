#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "micronas/supernet/supernet.hpp"

namespace micronas::cli {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name. Results go to
/// files or `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Byte quantity with an optional K/KB/KiB or M/MB/MiB suffix (powers of 1024).
std::int64_t parse_bytes(const std::string& text);
/// Op count with an optional K (1e3), M (1e6) or G (1e9) suffix.
std::int64_t parse_ops(const std::string& text);

struct RunManifest {
  std::string command;
  std::vector<std::string> config_paths;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::vector<std::string> output_paths;
  double duration_s = 0.0;
};

Json manifest_to_json(const RunManifest& m);
/// Writes `text` to a sibling temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& text);

}  // namespace micronas::cli
