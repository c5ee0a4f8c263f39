#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hdrx::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one `hdrx` invocation. argv[0] is the program name.
int cli_dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace hdrx::cli
