#pragma once

#include <charconv>
#include <string>

namespace pairsurv::detail {

// Shortest decimal text that parses back to the same double.
inline std::string shortest(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace pairsurv::detail
