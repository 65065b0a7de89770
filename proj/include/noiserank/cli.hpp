#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace noiserank {

// Exit codes: 0 success, 1 validation error (bad flags, bad config), 2 runtime
// failure. Primary output goes to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace noiserank
