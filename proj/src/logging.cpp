#include "bbmx/logging.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace bbmx {

namespace {
std::atomic<int> g_level{1};
std::mutex g_mutex;
} // namespace

void set_log_level(int level) { g_level = level; }
int log_level() { return g_level; }

void log_warning(std::string_view message) {
  if (g_level >= 1) {
    std::lock_guard lock(g_mutex);
    std::cerr << "warning: " << message << '\n';
  }
}

void log_info(std::string_view message) {
  if (g_level >= 2) {
    std::lock_guard lock(g_mutex);
    std::cerr << message << '\n';
  }
}

} // namespace bbmx
