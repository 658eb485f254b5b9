#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace peftbench {

// Exit codes: 0 success, 1 usage error, 2 runtime or data error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one command line (without the program name).
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace peftbench
