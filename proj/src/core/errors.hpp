#pragma once

#include <stdexcept>
#include <string>

namespace scpc {

// File and parse failures; everything else uses std::invalid_argument for
// precondition violations and std::runtime_error for internal failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scpc
