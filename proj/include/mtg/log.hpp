#pragma once

#include <spdlog/spdlog.h>

namespace mtg {

/// Shared stderr logger; level taken from the MTG_LOG environment variable
/// (trace, debug, info, warn, error, off). Defaults to warn.
spdlog::logger& logger();

}  // namespace mtg
