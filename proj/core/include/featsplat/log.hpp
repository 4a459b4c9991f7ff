#pragma once

#include <iostream>
#include <string_view>

namespace featsplat::log {

inline void info(std::string_view msg) { std::cerr << "[featsplat] " << msg << '\n'; }
inline void warn(std::string_view msg) { std::cerr << "[featsplat] warning: " << msg << '\n'; }

} // namespace featsplat::log
