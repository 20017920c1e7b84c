#ifndef PROD_LOG_HPP_
#define PROD_LOG_HPP_

#include <string>

namespace prod {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

inline bool operator>=(LogLevel a, LogLevel b) {
  return static_cast<int>(a) >= static_cast<int>(b);
}

void set_log_level(LogLevel level);
LogLevel log_level();

// Progress telemetry goes to stderr; results belong on stdout or in files.
void log_info(const std::string& message);
void log_debug(const std::string& message);

}  // namespace prod

#endif  // PROD_LOG_HPP_
