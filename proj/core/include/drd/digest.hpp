#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace drd {

// SHA-256, hex-encoded. Self-contained implementation; used for cache keys,
// config digests, and manifest file digests.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace drd
