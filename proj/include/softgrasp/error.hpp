#pragma once

#include <stdexcept>
#include <string>

namespace softgrasp {

// Every failure carries a short machine-readable kind ("parse_error",
// "no_contact", ...) in addition to the human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

}  // namespace softgrasp
