#pragma once

// Line-delimited JSON log records.

#include <nlohmann/json.hpp>

#include <string_view>

namespace crisp::log {

enum class Level { Debug, Info, Warn, Error };

void set_level(Level level);
void set_enabled(bool enabled);

void write(Level level, std::string_view stage, std::string_view message,
           const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view stage, std::string_view message,
                 const nlohmann::json& fields = nlohmann::json::object()) {
  write(Level::Info, stage, message, fields);
}
inline void warn(std::string_view stage, std::string_view message,
                 const nlohmann::json& fields = nlohmann::json::object()) {
  write(Level::Warn, stage, message, fields);
}

}  // namespace crisp::log
