#include "hft/loss.hpp"

#include <stdexcept>

namespace hft {

using nn::Tensor;

template <class S>
Tensor<S> grid_tensor(const std::vector<float>& grid, int64_t frames, int64_t pitches) {
    if (static_cast<int64_t>(grid.size()) != frames * pitches) {
        throw std::invalid_argument("grid_tensor: size mismatch");
    }
    std::vector<S> v(grid.size());
    for (size_t i = 0; i < grid.size(); ++i) v[i] = static_cast<S>(grid[i]);
    return Tensor<S>::from({frames, pitches}, std::move(v));
}

namespace {

template <class S>
void check_grid_shapes(const GridOutput<S>& out, const TargetGrids& t) {
    const nn::Shape expect{t.frames, t.pitches};
    if (out.frame.shape() != expect) {
        throw std::invalid_argument("loss: output grid shape " + nn::shape_str(out.frame.shape()) +
                                    " does not match target " + nn::shape_str(expect));
    }
}

}  // namespace

template <class S>
Tensor<S> hierarchy_loss(const GridOutput<S>& out, const TargetGrids& targets) {
    check_grid_shapes(out, targets);
    auto frame = nn::bce_sum(grid_tensor<S>(targets.frame, targets.frames, targets.pitches),
                             out.frame);
    auto onset = nn::bce_sum(grid_tensor<S>(targets.onset, targets.frames, targets.pitches),
                             out.onset);
    auto offset = nn::bce_sum(grid_tensor<S>(targets.offset, targets.frames, targets.pitches),
                              out.offset);
    auto velocity = nn::cce_sum(std::span<const uint8_t>(targets.velocity), out.velocity_logits);
    return nn::add(nn::add(nn::add(frame, onset), offset), velocity);
}

template <class S>
LossBreakdown<S> total_loss(const ModelOutput<S>& out, const TargetGrids& targets, S weight_first,
                            S weight_second) {
    check_grid_shapes(out.output_1st, targets);
    LossBreakdown<S> bd;
    auto frame_t = grid_tensor<S>(targets.frame, targets.frames, targets.pitches);
    auto onset_t = grid_tensor<S>(targets.onset, targets.frames, targets.pitches);
    auto offset_t = grid_tensor<S>(targets.offset, targets.frames, targets.pitches);
    const std::span<const uint8_t> vel_ids(targets.velocity);

    auto parts = [&](const GridOutput<S>& g, S& f, S& on, S& off, S& vel) {
        auto lf = nn::bce_sum(frame_t, g.frame);
        auto lo = nn::bce_sum(onset_t, g.onset);
        auto lx = nn::bce_sum(offset_t, g.offset);
        auto lv = nn::cce_sum(vel_ids, g.velocity_logits);
        f = lf.item();
        on = lo.item();
        off = lx.item();
        vel = lv.item();
        return nn::add(nn::add(nn::add(lf, lo), lx), lv);
    };

    auto first = parts(out.output_1st, bd.frame_1st, bd.onset_1st, bd.offset_1st, bd.velocity_1st);
    bd.first = first.item();
    if (out.output_2nd.has_value()) {
        auto second =
            parts(*out.output_2nd, bd.frame_2nd, bd.onset_2nd, bd.offset_2nd, bd.velocity_2nd);
        bd.second = second.item();
        bd.loss = nn::add(nn::scale(first, weight_first), nn::scale(second, weight_second));
    } else {
        bd.loss = nn::scale(first, weight_first);
    }
    bd.combined = bd.loss.item();
    return bd;
}

#define HFT_INSTANTIATE_LOSS(S)                                                          \
    template Tensor<S> grid_tensor<S>(const std::vector<float>&, int64_t, int64_t);      \
    template Tensor<S> hierarchy_loss<S>(const GridOutput<S>&, const TargetGrids&);      \
    template LossBreakdown<S> total_loss<S>(const ModelOutput<S>&, const TargetGrids&, S, S);

HFT_INSTANTIATE_LOSS(float)
HFT_INSTANTIATE_LOSS(double)

#undef HFT_INSTANTIATE_LOSS

}  // namespace hft
