#include "crisp/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>

namespace crisp::log {
namespace {

std::atomic<int> g_level{static_cast<int>(Level::Info)};
std::atomic<bool> g_enabled{true};
std::mutex g_mutex;

const char* level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
  }
  return "info";
}

}  // namespace

void set_level(Level level) { g_level = static_cast<int>(level); }
void set_enabled(bool enabled) { g_enabled = enabled; }

void write(Level level, std::string_view stage, std::string_view message,
           const nlohmann::json& fields) {
  if (!g_enabled || static_cast<int>(level) < g_level) return;
  nlohmann::json record = {
      {"ts_ms", std::chrono::duration_cast<std::chrono::milliseconds>(
                    std::chrono::system_clock::now().time_since_epoch())
                    .count()},
      {"level", level_name(level)},
      {"stage", stage},
      {"msg", message},
  };
  for (const auto& [key, value] : fields.items()) record[key] = value;
  const std::string line = record.dump();
  std::lock_guard lock(g_mutex);
  std::fprintf(stderr, "%s\n", line.c_str());
}

}  // namespace crisp::log
