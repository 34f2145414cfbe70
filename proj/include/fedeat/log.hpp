#pragma once

// Stderr logging. Verbosity comes from FEDEAT_LOG_LEVEL (error, warn, info,
// debug; default info). Timestamps appear here and nowhere else.

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <mutex>
#include <string>
#include <string_view>

namespace fedeat::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline Level parse_level(std::string_view s) {
    std::string lower(s);
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "error" || lower == "quiet") return Level::error;
    if (lower == "warn" || lower == "warning") return Level::warn;
    if (lower == "debug" || lower == "trace") return Level::debug;
    return Level::info;
}

inline Level& threshold() {
    static Level level = [] {
        const char* env = std::getenv("FEDEAT_LOG_LEVEL");
        return env ? parse_level(env) : Level::info;
    }();
    return level;
}

inline void write(Level level, std::string_view msg) {
    if (level > threshold()) return;
    static std::mutex mu;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[16];
    std::strftime(stamp, sizeof stamp, "%H:%M:%S", &tm);
    std::lock_guard lock(mu);
    std::fprintf(stderr, "[%s] %s: %.*s\n", stamp, names[static_cast<int>(level)], static_cast<int>(msg.size()),
                 msg.data());
}

inline void error(std::string_view m) { write(Level::error, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void debug(std::string_view m) { write(Level::debug, m); }

} // namespace fedeat::log
