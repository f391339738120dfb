#pragma once

namespace polyfeed {

inline constexpr const char* kVersion = "polyfeed 0.1.0";

}  // namespace polyfeed
