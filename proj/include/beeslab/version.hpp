#pragma once

namespace beeslab {
inline constexpr const char* kVersion = "0.1.0";
}
