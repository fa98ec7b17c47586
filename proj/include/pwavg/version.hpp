#pragma once

namespace pwavg {
inline constexpr const char* kVersion = "0.1.0";
}
