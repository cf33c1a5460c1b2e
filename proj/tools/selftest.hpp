#pragma once

#include <iosfwd>
#include <string>

namespace dqen::tools {

// Runs the invariant suites (optionally only those whose name contains
// filter), prints one line per suite and returns 0 when all pass.
int run_selftest(std::ostream& out, const std::string& filter = "");

}  // namespace dqen::tools
