#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace plume::cli {

/// Runs the command line `args` (without the program name). Returns the process exit code:
/// 0 on success, 1 when a pipeline stage fails, 2 on usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace plume::cli
