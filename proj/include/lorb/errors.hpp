#ifndef LORB_ERRORS_HPP_
#define LORB_ERRORS_HPP_

#include <sstream>
#include <stdexcept>
#include <string>

namespace lorb {

// Shape or dimension disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf reached an operation that requires finite input.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (rank too large, empty targets, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; message carries the line number where known.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void concat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void concat_into(std::ostringstream& oss, T&& head, Rest&&... rest) {
  oss << std::forward<T>(head);
  concat_into(oss, std::forward<Rest>(rest)...);
}

}  // namespace detail

// strcat("a", 1, 'b') -> "a1b"; used for error messages and names.
template <typename... Args>
std::string strcat(Args&&... args) {
  std::ostringstream oss;
  detail::concat_into(oss, std::forward<Args>(args)...);
  return oss.str();
}

}  // namespace lorb

#endif  // LORB_ERRORS_HPP_
