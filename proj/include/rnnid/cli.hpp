#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace rnnid {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitIo = 2,
  kExitCertificateFail = 3,   // certify fail, probe verdict fail
  kExitParse = 4,             // malformed file or unknown architecture
  kExitVerifyRefused = 5,     // uncertified model without --advisory
  kExitDimensionMismatch = 6, // compare on incompatible models
  kExitNotCertified = 7,      // training ended without a certified snapshot
  kExitUnsafe = 8,            // verification verdict unsafe
  kExitNumeric = 9,           // divergence or plant event
};

inline constexpr std::string_view kToolVersion = "rnnid 0.1.0";

/// Deterministic substream seed for a named purpose (dataset, init, minibatch, scenario, probe).
std::uint64_t named_seed(std::uint64_t seed, std::string_view name);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

/// Entry point; argv[0] is the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace rnnid
