#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace kvret::cli {

/// Runs the command line; `args` excludes the program name. Returns the
/// process exit code: 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace kvret::cli
