#pragma once

namespace svdscope {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace svdscope
