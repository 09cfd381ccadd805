#include "segchange/rng.hpp"

#include <sstream>

namespace segchange {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
}

}  // namespace segchange
