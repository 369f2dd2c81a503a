#ifndef LORB_LOGGING_HPP_
#define LORB_LOGGING_HPP_

#include <cstdlib>
#include <iostream>
#include <string>

namespace lorb {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Verbosity comes from LORB_LOG={error,info,debug}; default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("LORB_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string v = env;
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
  if (level > log_level()) return;
  const char* tag = level == LogLevel::kError   ? "error"
                    : level == LogLevel::kInfo ? "info"
                                               : "debug";
  std::cerr << "[lorb:" << tag << "] " << msg << "\n";
}

inline void log_error(const std::string& msg) { log_message(LogLevel::kError, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::kInfo, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::kDebug, msg); }

}  // namespace lorb

#endif  // LORB_LOGGING_HPP_
