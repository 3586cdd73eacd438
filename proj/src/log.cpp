#include "pyramnet/log.hpp"

#include <iostream>
#include <set>

namespace pyramnet {

namespace {
LogLevel g_level = LogLevel::kInfo;

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug:
      return "debug";
    case LogLevel::kInfo:
      return "info";
    case LogLevel::kWarning:
      return "warning";
    case LogLevel::kError:
      return "error";
    default:
      return "";
  }
}
}  // namespace

void set_log_level(LogLevel level) { g_level = level; }
LogLevel log_level() { return g_level; }

void log(LogLevel level, const std::string& message) {
  if (level < g_level || level == LogLevel::kSilent) return;
  std::cerr << '[' << tag(level) << "] " << message << '\n';
}

void warn_once(const std::string& message) {
  static std::set<std::string> seen;
  if (seen.insert(message).second) log(LogLevel::kWarning, message);
}

}  // namespace pyramnet
