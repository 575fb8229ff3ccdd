#include "anymole/log.hpp"

#include <atomic>
#include <iostream>

namespace anymole::log {

namespace {
std::atomic<long> g_warning_count{0};
}

void warn(const std::string& message) {
  g_warning_count.fetch_add(1, std::memory_order_relaxed);
  std::cerr << "[anymole] warning: " << message << "\n";
}

long warning_count() { return g_warning_count.load(std::memory_order_relaxed); }

void reset_warning_count() { g_warning_count.store(0, std::memory_order_relaxed); }

}  // namespace anymole::log
