#pragma once

#include <string>

namespace cloak {

/// Shortest decimal text that reads back to exactly `v`; NaN prints as NA.
std::string format_number(double v);

}  // namespace cloak
