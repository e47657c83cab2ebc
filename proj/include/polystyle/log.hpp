#pragma once

#include <atomic>
#include <iostream>
#include <string_view>

namespace polystyle::log {

inline std::atomic<bool>& verbose_flag() {
    static std::atomic<bool> flag{false};
    return flag;
}

inline void set_verbose(bool on) { verbose_flag() = on; }

inline void info(std::string_view msg) {
    if (verbose_flag()) std::cerr << "[info] " << msg << '\n';
}

inline void warn(std::string_view msg) { std::cerr << "[warn] " << msg << '\n'; }

}  // namespace polystyle::log
