#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gcnbid::cli {

/// Exit statuses shared by every verb.
enum Status : int {
  kOk = 0,
  kFailure = 1,     // gradcheck above tolerance, unexpected internal error
  kBadInput = 2,    // usage, config or data-file error, unknown fault id
  kInfeasible = 3,  // market cannot be cleared
  kCheckpoint = 4,  // unreadable checkpoint or feature-width mismatch
};

/// Runs one command line (args exclude the program name). Data goes to `out`,
/// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& bytes);

}  // namespace gcnbid::cli
