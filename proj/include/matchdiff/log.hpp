#pragma once

#include <functional>
#include <string>

namespace matchdiff {

using LogSink = std::function<void(const std::string&)>;

/// Replaces the warning sink (stderr by default); returns the previous one.
LogSink set_log_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace matchdiff
