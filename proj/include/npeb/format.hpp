#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace npeb {

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

/// Whole-string decimal parse; throws ParseError naming `what` on junk.
double parse_double(std::string_view text, std::string_view what);
long long parse_integer(std::string_view text, std::string_view what);

/// Comma-separated numbers, blanks ignored.
std::vector<double> parse_double_list(std::string_view text, std::string_view what);

std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

}  // namespace npeb
