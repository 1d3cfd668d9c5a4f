#pragma once

#include <cstdint>
#include <vector>

#include "hft/targets.hpp"

namespace hft {

/// Posterior grids over (frame, pitch) with velocity carried as argmax
/// classes. Produced per chunk by the model wrapper and whole-recording by
/// the stitcher; also buildable from target grids for round-trip checks.
struct GridRoll {
    int64_t frames = 0;   // T (or N for a single chunk)
    int64_t pitches = 0;  // P
    std::vector<float> frame, onset, offset;  // T x P
    std::vector<uint8_t> velocity;            // T x P classes 0..127

    int64_t idx(int64_t t, int64_t p) const { return t * pitches + p; }
};

using StitchedGrids = GridRoll;

GridRoll grids_from_targets(const TargetGrids& t);

}  // namespace hft
