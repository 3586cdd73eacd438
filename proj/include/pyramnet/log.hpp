#pragma once

#include <string>

namespace pyramnet {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarning = 2, kError = 3, kSilent = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

// Writes "[level] message" to stderr when level >= the configured threshold.
void log(LogLevel level, const std::string& message);
// Same as log(kWarning, ...) but each distinct message is emitted only once per process.
void warn_once(const std::string& message);

}  // namespace pyramnet
