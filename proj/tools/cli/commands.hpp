#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lcp::cli {

/// Parses `args` (program name excluded), runs one subcommand and returns
/// the process exit code: 0 success, 1 usage, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Groups digits in threes: 333424640 -> "333,424,640".
std::string group_digits(unsigned long long v);

}  // namespace lcp::cli
