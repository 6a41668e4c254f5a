#pragma once

namespace rrpo {

inline constexpr const char* kVersionString = "rrpo 0.1.0";

}  // namespace rrpo
