#include "uap/log.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

#include "uap/format.hpp"

namespace uap::log {

namespace {

Level from_env() {
  Level lvl = Level::Info;
  if (const char* env = std::getenv("UAP_LOG")) parse_level(env, lvl);
  return lvl;
}

std::atomic<int>& current() {
  static std::atomic<int> lvl{static_cast<int>(from_env())};
  return lvl;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

bool parse_level(std::string_view name, Level& out) {
  if (name == "error") out = Level::Error;
  else if (name == "info") out = Level::Info;
  else if (name == "debug") out = Level::Debug;
  else return false;
  return true;
}

Level level() { return static_cast<Level>(current().load()); }

void set_level(Level lvl) { current().store(static_cast<int>(lvl)); }

void write(Level lvl, std::string_view msg) {
  if (static_cast<int>(lvl) > current().load()) return;
  static constexpr const char* kTags[] = {"error", "info", "debug"};
  std::lock_guard lock(sink_mutex());
  std::fprintf(stderr, "[uap %s] %.*s\n", kTags[static_cast<int>(lvl)],
               static_cast<int>(msg.size()), msg.data());
}

}  // namespace uap::log

namespace uap::fmt {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fixed(double v, int digits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

}  // namespace uap::fmt
