#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hft/grids.hpp"
#include "hft/targets.hpp"

// Grid posteriors -> note events. Per pitch: pick onset peaks, refine them
// to sub-frame precision from the three frames around each peak, read the
// velocity class at the peak frame, and close each note at the earlier of
// the refined offset-head peak and the first frame-head dropout.

namespace hft {

/// Indices of local maxima with value >= thresh. Boundary neighbors count
/// as 0; on a plateau of equal values the earliest index wins.
std::vector<int64_t> find_local_maxima(std::span<const float> seq, float thresh = 0.5f);

/// Sub-frame correction of a peak from its neighbors (a, b, c) at frames
/// t-1, t, t+1 with b >= a, b >= c: the apex of a symmetric triangle fitted
/// through the higher shoulder. Returns a value clamped to [-0.5, 0.5].
double refine_peak_time(double a, double b, double c);

struct DecodeOptions {
    double hop_seconds = kDefaultHopSeconds;
    float threshold = 0.5f;
    /// Peaks on one pitch closer than this many frames keep only the higher
    /// one (earlier wins ties).
    int64_t min_onset_gap_frames = 2;
};

std::vector<NoteEvent> decode_notes(const GridRoll& grids, const DecodeOptions& opts = {});

}  // namespace hft
