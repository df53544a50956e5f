#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace viact::cli {

/// Runs one `viact` invocation; `args` excludes the program name. Returns
/// the process exit code: 0 on success, 2 on configuration errors, 1 on
/// other failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace viact::cli
