#pragma once

#include <functional>
#include <string>

namespace dqen {

enum class LogLevel { kDebug, kInfo, kWarning, kError };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Replaces the process-wide sink (stderr by default); returns the previous one.
LogSink set_log_sink(LogSink sink);
void set_log_level(LogLevel level);
void log(LogLevel level, const std::string& message);

inline void log_info(const std::string& m) { log(LogLevel::kInfo, m); }
inline void log_warning(const std::string& m) { log(LogLevel::kWarning, m); }

}  // namespace dqen
