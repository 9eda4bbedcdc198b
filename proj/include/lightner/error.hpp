#pragma once

#include <stdexcept>
#include <string>

namespace lightner {

// Every failure surfaced by the library carries a stable machine-readable code
// (e.g. "SHAPE_MISMATCH") next to the human message. The CLI prints both.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace lightner
