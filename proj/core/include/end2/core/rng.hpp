#pragma once

#include <cstdint>
#include <string_view>

namespace end2 {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent seed for a named consumer ("init", "messages", "crops",
/// "distortion", ...) of the run's master seed. Pure function of its arguments.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) noexcept;

}  // namespace end2
