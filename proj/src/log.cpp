#include "dqen/log.hpp"

#include <iostream>
#include <mutex>

namespace dqen {

namespace {

std::mutex g_mutex;
LogLevel g_level = LogLevel::kInfo;

const char* level_name(LogLevel l) {
  switch (l) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarning: return "warning";
    case LogLevel::kError: return "error";
  }
  return "?";
}

LogSink& sink() {
  static LogSink s = [](LogLevel level, const std::string& message) {
    std::cerr << "[" << level_name(level) << "] " << message << '\n';
  };
  return s;
}

}  // namespace

LogSink set_log_sink(LogSink s) {
  std::lock_guard lock(g_mutex);
  LogSink previous = std::move(sink());
  sink() = std::move(s);
  return previous;
}

void set_log_level(LogLevel level) {
  std::lock_guard lock(g_mutex);
  g_level = level;
}

void log(LogLevel level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (level < g_level || !sink()) return;
  sink()(level, message);
}

}  // namespace dqen
