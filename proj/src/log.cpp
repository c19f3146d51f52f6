#include "koopmhe/log.hpp"

#include <atomic>
#include <cstdio>

namespace koopmhe {
namespace {

std::atomic<int> g_level{static_cast<int>(LogLevel::kWarning)};

void emit(LogLevel level, const char* tag, const std::string& message) {
  if (static_cast<int>(level) > g_level.load()) return;
  std::fprintf(stderr, "[%s] %s\n", tag, message.c_str());
}

}  // namespace

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warning(const std::string& message) { emit(LogLevel::kWarning, "warn", message); }
void log_info(const std::string& message) { emit(LogLevel::kInfo, "info", message); }
void log_debug(const std::string& message) { emit(LogLevel::kDebug, "debug", message); }

}  // namespace koopmhe
