#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "mtg/model.hpp"

namespace mtg {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  AggregatorParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

/// "MTGP" container: tau, then branch -> layer -> named f64 tensors, then metadata JSON.
std::size_t write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);

/// Writes through a temporary file and renames, so a crash never leaves a partial checkpoint.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtg
