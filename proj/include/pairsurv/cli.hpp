#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pairsurv {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumeric = 3,
};

// Entry point of the `pairsurv` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pairsurv
