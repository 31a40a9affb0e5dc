#include "cloak/format.hpp"

#include <charconv>
#include <cmath>

#include "cloak/error.hpp"

namespace cloak {

std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw Error("failed to format number");
  return std::string(buf, end);
}

}  // namespace cloak
