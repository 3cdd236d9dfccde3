#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace matchdiff::cli {

/// Runs one `matchdiff` invocation (args exclude the program name) and
/// returns the process exit code: 0 ok, 2 config, 3 data, 4 numeric.
/// Failures are reported on `err` as a single line "ERROR:<code>:<message>".
int run(const std::vector<std::string>& args, std::ostream& err);

}  // namespace matchdiff::cli
