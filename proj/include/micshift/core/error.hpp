#pragma once

#include <stdexcept>
#include <string>

namespace micshift {

/// Base exception. `code()` is a stable identifier surfaced in CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

inline void require(bool cond, const char* code, const std::string& what) {
  if (!cond) {
    throw Error(code, what);
  }
}

}  // namespace micshift
