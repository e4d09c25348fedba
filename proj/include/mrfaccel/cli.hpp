#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mrfaccel::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kRuntimeError = 2,
  kVerificationFailure = 3,
};

/// Entry point shared by the executable and the tests. args excludes the
/// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mrfaccel::cli
