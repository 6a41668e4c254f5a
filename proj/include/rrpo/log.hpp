#pragma once

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>

namespace rrpo {

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Level comes from RRPO_LOG={error,info,debug}; default info.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("RRPO_LOG");
        if (!env) return LogLevel::kInfo;
        if (std::strcmp(env, "error") == 0) return LogLevel::kError;
        if (std::strcmp(env, "debug") == 0) return LogLevel::kDebug;
        return LogLevel::kInfo;
    }();
    return level;
}

inline void log_error(const std::string& msg) { std::cerr << "[rrpo] error: " << msg << "\n"; }

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::kInfo) std::cerr << "[rrpo] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::kDebug) std::cerr << "[rrpo] debug: " << msg << "\n";
}

}  // namespace rrpo
