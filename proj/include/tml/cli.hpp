#pragma once

#include <string>
#include <vector>

namespace tml::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kValidation = 3,
  kRuntime = 4,
};

/// Entry point shared by the tml binary and the tests. args excludes argv[0].
int run(const std::vector<std::string>& args);

} // namespace tml::cli
