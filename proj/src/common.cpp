#include "ilad/common.hpp"

#include <charconv>

namespace ilad {

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw InvalidState("double formatting failed");
  return std::string(buf, ptr);
}

}  // namespace ilad
