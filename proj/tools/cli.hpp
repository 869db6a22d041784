#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cdcl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad flags or config
inline constexpr int kExitRuntime = 2;  // missing files, numeric failure, I/O

// `args` excludes the program name. Reports go to `out`, progress and
// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cdcl::cli
