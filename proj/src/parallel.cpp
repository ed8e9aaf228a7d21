#include "stochsplit/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace stochsplit {

int resolve_threads(int requested) {
  int n = requested;
  if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* cap = std::getenv(kThreadsEnv)) {
    try {
      const int c = std::stoi(cap);
      if (c >= 1) n = std::min(n, c);
    } catch (const std::exception&) {
      // unparsable cap is ignored
    }
  }
  return std::max(n, 1);
}

}  // namespace stochsplit
