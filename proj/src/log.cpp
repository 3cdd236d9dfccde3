#include "matchdiff/log.hpp"

#include <iostream>
#include <mutex>

namespace matchdiff {

namespace {
std::mutex g_mutex;
LogSink g_sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
}  // namespace

LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(g_mutex);
  std::swap(g_sink, sink);
  return sink;
}

void log_warning(const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (g_sink) g_sink(message);
}

}  // namespace matchdiff
