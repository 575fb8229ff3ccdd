#pragma once

#include <string>

namespace anymole::log {

// Warnings go to stderr; a process-wide counter makes them observable in
// tests without capturing the stream.
void warn(const std::string& message);
long warning_count();
void reset_warning_count();

}  // namespace anymole::log
