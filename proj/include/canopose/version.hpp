#pragma once

namespace canopose {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace canopose
