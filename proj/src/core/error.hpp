#ifndef PROTORET_CORE_ERROR_HPP
#define PROTORET_CORE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace protoret {

/// File could not be opened/read/written.
class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File exists but does not follow the expected format.
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A requested configuration cannot be satisfied by the data
/// (too few eligible classes, empty split, rare CV without pairs).
class InfeasibleError : public std::runtime_error {
public:
  explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace protoret

#endif
