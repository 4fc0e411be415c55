#include "neuralmrf/log.hpp"

#include <iostream>
#include <mutex>

namespace nmrf::log {

namespace {

std::mutex g_mutex;
Level g_level = Level::kWarn;
std::function<void(Level, std::string_view)> g_sink;

const char* tag(Level l) {
  switch (l) {
    case Level::kWarn:
      return "warning: ";
    case Level::kDebug:
      return "debug: ";
    default:
      return "";
  }
}

}  // namespace

void set_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_level = level;
}

Level level() {
  std::lock_guard lock(g_mutex);
  return g_level;
}

void set_sink(std::function<void(Level, std::string_view)> sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

void write(Level l, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (static_cast<int>(l) > static_cast<int>(g_level)) return;
  if (g_sink) {
    g_sink(l, message);
    return;
  }
  std::cerr << tag(l) << message << '\n';
}

}  // namespace nmrf::log
