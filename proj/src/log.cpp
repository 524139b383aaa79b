#include "pfr/log.hpp"

#include <atomic>
#include <iostream>

namespace pfr::log {
namespace {
std::atomic<bool> g_quiet{false};
std::atomic<std::size_t> g_warnings{0};
}  // namespace

void info(const std::string& message) {
  if (!g_quiet) std::cerr << "[pfr] " << message << '\n';
}

void warn(const std::string& message) {
  ++g_warnings;
  if (!g_quiet) std::cerr << "[pfr] warning: " << message << '\n';
}

void set_quiet(bool quiet) { g_quiet = quiet; }

std::size_t warning_count() { return g_warnings; }

}  // namespace pfr::log
