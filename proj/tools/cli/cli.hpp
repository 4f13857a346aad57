#pragma once

#include <map>
#include <ostream>
#include <string>

namespace modgate::cli {

/// Parses arguments, validates the merged config and runs one subcommand.
/// Exit codes: 0 success, 1 runtime error, 2 usage or config error,
/// 3 injected crash. Errors go to `err` as one JSON object per line.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::map<std::string, std::string>& env);

}  // namespace modgate::cli
