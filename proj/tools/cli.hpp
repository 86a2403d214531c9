#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tmaseg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses `key = value` lines; `#` starts a comment. Throws tmaseg::Error
/// (ParseError) on malformed lines or repeated keys.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin);

/// Runs the tool with `args` (program name excluded) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tmaseg::cli
