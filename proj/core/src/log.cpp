#include "fedasync/log.hpp"

#include <iostream>
#include <mutex>

namespace fedasync {

namespace {

std::mutex& sink_mutex() {
  static std::mutex mu;
  return mu;
}

LogSink& sink_storage() {
  static LogSink sink;
  return sink;
}

}  // namespace

void set_log_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex());
  sink_storage() = std::move(sink);
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink_storage()) {
    sink_storage()(level, message);
    return;
  }
  if (level == LogLevel::info) return;
  std::cerr << (level == LogLevel::warning ? "warning: " : "error: ") << message << '\n';
}

}  // namespace fedasync
