#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace mgm::logging {

inline std::atomic<bool>& quiet_flag() {
    static std::atomic<bool> quiet{false};
    return quiet;
}

inline void set_quiet(bool quiet) { quiet_flag() = quiet; }

inline void warn(std::string_view msg) {
    if (!quiet_flag()) std::clog << "[mgm] warning: " << msg << '\n';
}

inline void info(std::string_view msg) {
    if (!quiet_flag()) std::clog << "[mgm] " << msg << '\n';
}

}  // namespace mgm::logging
