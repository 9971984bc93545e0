#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>

namespace firegan::log {

enum class Level { debug, info, warn, error };

inline const char* level_name(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "?";
}

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {
struct State {
  std::mutex mutex;
  Level threshold = Level::info;
  Sink sink;
};
inline State& state() {
  static State s;
  return s;
}
}  // namespace detail

inline void set_level(Level level) {
  std::lock_guard lock(detail::state().mutex);
  detail::state().threshold = level;
}

// Replaces the stderr sink; returns the previous one so tests can restore it.
inline Sink set_sink(Sink sink) {
  std::lock_guard lock(detail::state().mutex);
  auto old = std::move(detail::state().sink);
  detail::state().sink = std::move(sink);
  return old;
}

inline void write(Level level, std::string_view message) {
  auto& s = detail::state();
  std::lock_guard lock(s.mutex);
  if (level < s.threshold) return;
  if (s.sink) {
    s.sink(level, message);
    return;
  }
  std::cerr << "[firegan " << level_name(level) << "] " << message << '\n';
}

inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void error(std::string_view m) { write(Level::error, m); }

}  // namespace firegan::log
