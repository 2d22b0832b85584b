#pragma once

namespace pfsc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pfsc
