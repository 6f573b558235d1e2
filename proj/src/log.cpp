#include "mtg/log.hpp"

#include <cstdlib>
#include <memory>

#include <spdlog/sinks/stdout_sinks.h>

namespace mtg {

spdlog::logger& logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    auto log = std::make_shared<spdlog::logger>("mtg", sink);
    log->set_pattern("[%l] %v");
    spdlog::level::level_enum level = spdlog::level::warn;
    if (const char* env = std::getenv("MTG_LOG"); env != nullptr && *env != '\0') {
      level = spdlog::level::from_str(env);
    }
    log->set_level(level);
    return log;
  }();
  return *instance;
}

}  // namespace mtg
