#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace rwre {

// Locale-free shortest round-trip representation; "inf", "-inf", "nan".
inline std::string format_double(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

}  // namespace rwre
