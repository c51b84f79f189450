#pragma once

#include <stdexcept>

namespace vitol {

// Filesystem or file-format failure.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace vitol
