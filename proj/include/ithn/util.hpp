#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ithn::util {

// 64-bit FNV-1a; stable across platforms, used for config and artifact hashes.
std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

// Shortest decimal that round-trips exactly.
std::string format_double(double v);
double parse_double(std::string_view s);
int parse_int(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep, bool skip_empty = true);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view s);

}  // namespace ithn::util
