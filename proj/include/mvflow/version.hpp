#pragma once

namespace mvflow {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mvflow
