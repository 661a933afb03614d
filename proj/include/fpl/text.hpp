#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fpl {

/// Malformed input file; the message carries the line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/// Shortest representation that parses back to the identical double.
std::string format_double(double v);

double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::vector<std::string_view> split_whitespace(std::string_view line);
std::string_view trim(std::string_view s);

}  // namespace fpl
