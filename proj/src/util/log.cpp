#include "lpt/util/log.hpp"

#include <atomic>
#include <cstdio>

namespace lpt::log {

namespace {
std::atomic<Level> g_level{Level::info};
const char* names[] = {"debug", "info", "warn", "error"};
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void write(Level lvl, const std::string& message) {
  if (lvl < g_level.load() || lvl == Level::off) return;
  std::fprintf(stderr, "[lpt %s] %s\n", names[static_cast<int>(lvl)], message.c_str());
}

}  // namespace lpt::log
