#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "protoforge/error.hpp"

namespace protoforge::tools {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,       // bad flags or bad input files
  kExitInfeasible = 3,  // degenerate or infeasible math
  kExitDiverged = 4,
  kExitIdentity = 5,    // an internal identity check failed
};

int exit_code_for(ErrorCode code);

// args[0] is the program name, as in argv.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protoforge::tools
