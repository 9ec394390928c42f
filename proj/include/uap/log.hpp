#pragma once

#include <string_view>

// Diagnostics to stderr. Verbosity comes from UAP_LOG={error,info,debug};
// default info.
namespace uap::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

Level level();
void set_level(Level lvl);
bool parse_level(std::string_view name, Level& out);

void write(Level lvl, std::string_view msg);
inline void error(std::string_view msg) { write(Level::Error, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void debug(std::string_view msg) { write(Level::Debug, msg); }

}  // namespace uap::log
