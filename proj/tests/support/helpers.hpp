#pragma once

#include "airfilter/errors.hpp"

#include <optional>

namespace testing {

/// Error code thrown by f, or nullopt if it returns normally.
template <class F>
std::optional<airfilter::ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const airfilter::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace testing
