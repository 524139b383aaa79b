#pragma once

#include <cstddef>
#include <string>

namespace pfr::log {

void info(const std::string& message);
void warn(const std::string& message);

// Suppresses output (warnings are still counted).
void set_quiet(bool quiet);
std::size_t warning_count();

}  // namespace pfr::log
