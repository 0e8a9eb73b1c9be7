// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace psfl::oracles {

/// Regenerates every oracle table into `dir`. The expected values are
/// produced by independent scalar implementations (extended-precision
/// evaluation, sort-based pruning, plain matrix loops) that never touch the
/// simulator's compute paths; the test suite fails if checked-in tables
/// drift from a regeneration.
void write_oracles(const std::string& dir);

}  // namespace psfl::oracles
