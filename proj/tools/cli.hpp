#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ctssm::cli {

/// Exit codes shared by every command.
enum ExitCode : int { kOk = 0, kUsage = 2, kIngestion = 3, kNumeric = 4 };

/// Runs one command line (args excludes the program name). Normal output
/// goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Lowercase hex SHA-256 of a file's contents.
std::string file_sha256(const std::string &path);
std::string sha256_hex(const std::string &bytes);

} // namespace ctssm::cli
