#pragma once

#include "hft/model.hpp"
#include "hft/targets.hpp"

// Per-chunk losses: summed binary cross-entropy for the frame/onset/offset
// grids, summed 128-class cross-entropy for velocity (every cell counts;
// off-onset cells carry class 0), and the weighted combination of the two
// hierarchies' totals.

namespace hft {

template <class S>
struct LossBreakdown {
    // per-head sums, second hierarchy zero when absent
    S frame_1st = 0, onset_1st = 0, offset_1st = 0, velocity_1st = 0;
    S frame_2nd = 0, onset_2nd = 0, offset_2nd = 0, velocity_2nd = 0;
    S first = 0;     // sum of the four first-hierarchy terms
    S second = 0;    // sum of the four second-hierarchy terms
    S combined = 0;  // weight_first * first + weight_second * second
    nn::Tensor<S> loss;  // graph node for the combined value
};

/// Loss of one hierarchy's outputs against the grids (BCE x3 + CCE).
template <class S>
nn::Tensor<S> hierarchy_loss(const GridOutput<S>& out, const TargetGrids& targets);

/// Both hierarchies receive the same targets; a variant without a second
/// hierarchy contributes only the first term.
template <class S>
LossBreakdown<S> total_loss(const ModelOutput<S>& out, const TargetGrids& targets,
                            S weight_first, S weight_second);

// target-grid views as constant tensors
template <class S>
nn::Tensor<S> grid_tensor(const std::vector<float>& grid, int64_t frames, int64_t pitches);

}  // namespace hft
