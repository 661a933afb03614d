#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "fpl/text.hpp"

namespace fpl::detail {

/// Row-major, comma-separated; doubles are written round-trip exact.
template <class M>
std::string join_matrix(const M& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (!out.empty()) out += ',';
      if constexpr (std::is_integral_v<typename M::Scalar>)
        out += std::to_string(m(r, c));
      else
        out += format_double(m(r, c));
    }
  return out;
}

inline std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> parse_matrix(std::string_view s, int rows,
                                                                   int cols) {
  const auto tokens = split_commas(s);
  if (static_cast<long long>(tokens.size()) != static_cast<long long>(rows) * cols)
    throw std::invalid_argument("expected " + std::to_string(rows * cols) + " entries, found " +
                                std::to_string(tokens.size()));
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(rows, cols);
  std::size_t i = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if constexpr (std::is_integral_v<Scalar>)
        m(r, c) = static_cast<Scalar>(parse_int(tokens[i++]));
      else
        m(r, c) = parse_double(tokens[i++]);
    }
  return m;
}

/// key=value tokens of one line, starting at token `first`.
class Fields {
 public:
  Fields(const std::vector<std::string_view>& tokens, std::size_t first) {
    for (std::size_t i = first; i < tokens.size(); ++i) {
      const auto eq = tokens[i].find('=');
      if (eq == std::string_view::npos)
        throw std::invalid_argument("expected key=value, found '" + std::string(tokens[i]) + "'");
      if (!kv_.emplace(tokens[i].substr(0, eq), tokens[i].substr(eq + 1)).second)
        throw std::invalid_argument("duplicate field '" + std::string(tokens[i].substr(0, eq)) +
                                    "'");
    }
  }
  std::size_t size() const { return kv_.size(); }
  std::string_view get(std::string_view key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("missing field '" + std::string(key) + "'");
    return it->second;
  }
  int get_int(std::string_view key) const { return static_cast<int>(parse_int(get(key))); }
  double get_double(std::string_view key) const { return parse_double(get(key)); }

 private:
  std::map<std::string_view, std::string_view> kv_;
};

}  // namespace fpl::detail
