#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skpn {

// Exit codes shared by every verb.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitNumeric = 2;

// Entry point of the `skpn` tool: synth | stats | train | denoise | eval.
// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace skpn
