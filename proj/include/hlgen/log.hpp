#pragma once

#include <iostream>
#include <string_view>

namespace hlgen {

// Diagnostics go to stderr; stdout is reserved for command output.
inline void log_warning(std::string_view message) {
  std::cerr << "warning: " << message << '\n';
}

inline void log_info(std::string_view message) { std::cerr << message << '\n'; }

}  // namespace hlgen
