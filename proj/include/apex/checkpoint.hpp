#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "apex/net.hpp"

namespace apex {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little endian):
//   "APEXCKPT" | u32 version | architecture descriptor | u64 n | n x f64 | u64 fnv1a(all previous bytes)
// The descriptor is u32 data_dim, conditions, embed_dim, time_freqs,
// activation, learnable flag, hidden count, then one u32 per hidden width.
std::string serialize_checkpoint(const VelocityModel& model);
VelocityModel deserialize_checkpoint(const std::string& bytes);

void checkpoint_save(const VelocityModel& model, const std::filesystem::path& path);
VelocityModel checkpoint_load(const std::filesystem::path& path);

// Also rejects a checkpoint whose architecture differs from `expected`.
VelocityModel checkpoint_load(const std::filesystem::path& path, const Architecture& expected);

}  // namespace apex
