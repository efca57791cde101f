#include "color_sieve/parallel.hpp"

#include <cstdlib>
#include <string>

namespace color_sieve {

std::size_t effective_workers(std::size_t requested) {
  requested = std::max<std::size_t>(1, requested);
  if (const char* cap = std::getenv("COLOR_SIEVE_WORKERS")) {
    try {
      const long value = std::stol(cap);
      if (value > 0) requested = std::min(requested, static_cast<std::size_t>(value));
    } catch (const std::exception&) {
      // Unparseable cap is ignored.
    }
  }
  return requested;
}

}  // namespace color_sieve
