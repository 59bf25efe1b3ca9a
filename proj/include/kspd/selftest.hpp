#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kspd {

struct SelftestResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Invariant suites over seeded instances: eigensolver, matrix functions and
/// their derivatives, every gradcheck target, Adam, DSM round trip. Prints
/// one line per suite.
std::vector<SelftestResult> run_selftest(std::ostream& out);

}  // namespace kspd
