#pragma once

namespace drd {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace drd
