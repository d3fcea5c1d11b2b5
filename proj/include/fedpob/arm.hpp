#pragma once

#include <cstdint>
#include <span>

#include "fedpob/linalg.hpp"

namespace fedpob {

using ArmId = std::uint32_t;

// One candidate (a prompt, in the motivating application) and its embedding.
struct Arm {
  ArmId id = 0;
  Vector embedding;
};

using ArmSpan = std::span<const Arm>;

}  // namespace fedpob
