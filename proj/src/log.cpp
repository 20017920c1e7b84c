#include "prod/log.hpp"

#include <iostream>

namespace prod {

namespace {
LogLevel g_level = LogLevel::kInfo;
}

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log_info(const std::string& message) {
  if (g_level >= LogLevel::kInfo) std::cerr << "[prod] " << message << '\n';
}

void log_debug(const std::string& message) {
  if (g_level >= LogLevel::kDebug) std::cerr << "[prod] " << message << '\n';
}

}  // namespace prod
