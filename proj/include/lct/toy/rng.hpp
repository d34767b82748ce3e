#pragma once

#include "lct/rng.hpp"

namespace lct::toy {
using lct::Rng;
}  // namespace lct::toy
