#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace caad::cli {

/// Runs one command; args excludes the program name.
/// Returns 0 on success, 2 on usage or configuration errors, 1 on other failures.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace caad::cli
