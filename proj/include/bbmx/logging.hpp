#pragma once

#include <string_view>

namespace bbmx {

/// Writes "warning: <message>" to stderr unless warnings are silenced.
void log_warning(std::string_view message);
void log_info(std::string_view message);

/// 0 = silent, 1 = warnings (default), 2 = info.
void set_log_level(int level);
int log_level();

} // namespace bbmx
