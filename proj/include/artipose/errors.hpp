#pragma once

#include <stdexcept>
#include <string>

namespace artipose {

/// Rejected input: schema violations, broken invariants, bad dimensions.
class invalid_input : public std::runtime_error {
 public:
  explicit invalid_input(const std::string& what) : std::runtime_error(what) {}
};

/// Optimization left the feasible region (sustained loss blow-up or
/// non-finite quantities); carries a diagnostic naming the offender.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

#define ARTI_REQUIRE(cond, msg)                      \
  do {                                               \
    if (!(cond)) throw ::artipose::invalid_input(msg); \
  } while (0)

}  // namespace artipose
