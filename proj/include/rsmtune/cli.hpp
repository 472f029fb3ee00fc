#pragma once

#include <string>
#include <vector>

namespace rsmtune {

struct CommandOutcome {
  int exit_code = 0;  // 0 success, 1 domain error, 2 usage error
  std::string out;
  std::string err;
};

// Runs one command line (without the program name). State on disk is only
// rewritten when the command succeeds.
CommandOutcome dispatch(const std::vector<std::string>& args);

}  // namespace rsmtune
