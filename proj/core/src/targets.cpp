#include "hft/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hft {

void validate(const NoteEvent& n) {
    if (n.pitch < kPitchMin || n.pitch > kPitchMax) {
        throw std::invalid_argument("note: pitch " + std::to_string(n.pitch) +
                                    " outside [" + std::to_string(kPitchMin) + ", " +
                                    std::to_string(kPitchMax) + "]");
    }
    if (!(n.offset_s > n.onset_s)) {
        throw std::invalid_argument("note: offset " + std::to_string(n.offset_s) +
                                    " must be after onset " + std::to_string(n.onset_s));
    }
    if (n.velocity < 0 || n.velocity > 127) {
        throw std::invalid_argument("note: velocity " + std::to_string(n.velocity) +
                                    " outside [0, 127]");
    }
}

TargetGrids TargetGrids::slice_frames(int64_t start, int64_t n) const {
    TargetGrids out;
    out.frames = n;
    out.pitches = pitches;
    out.frame.assign(n * pitches, 0.0f);
    out.onset.assign(n * pitches, 0.0f);
    out.offset.assign(n * pitches, 0.0f);
    out.velocity.assign(n * pitches, 0);
    const int64_t copy = std::clamp<int64_t>(frames - start, 0, n);
    if (copy > 0) {
        std::copy_n(frame.data() + start * pitches, copy * pitches, out.frame.data());
        std::copy_n(onset.data() + start * pitches, copy * pitches, out.onset.data());
        std::copy_n(offset.data() + start * pitches, copy * pitches, out.offset.data());
        std::copy_n(velocity.data() + start * pitches, copy * pitches, out.velocity.data());
    }
    return out;
}

namespace {

/// Triangle of unit peak at time_s, hitting zero `sharpness` frames away.
/// Writes max(existing, value) into grid rows near the peak.
void stamp_triangle(std::vector<float>& grid, int64_t frames, int64_t pitches, int64_t p,
                    double time_s, double hop_s, int sharpness) {
    const int64_t center = static_cast<int64_t>(std::llround(time_s / hop_s));
    for (int64_t t = center - sharpness; t <= center + sharpness; ++t) {
        if (t < 0 || t >= frames) continue;
        const double v = 1.0 - std::abs(t * hop_s - time_s) / (sharpness * hop_s);
        if (v <= 0.0) continue;
        float& cell = grid[t * pitches + p];
        cell = std::max(cell, static_cast<float>(v));
    }
}

}  // namespace

TargetGrids notes_to_targets(std::span<const NoteEvent> notes, int64_t frames,
                             int64_t pitches, double hop_s, int sharpness) {
    if (frames < 0 || pitches < 1) {
        throw std::invalid_argument("notes_to_targets: bad grid dimensions");
    }
    if (sharpness < 1) throw std::invalid_argument("notes_to_targets: sharpness must be >= 1");

    TargetGrids g;
    g.frames = frames;
    g.pitches = pitches;
    g.frame.assign(frames * pitches, 0.0f);
    g.onset.assign(frames * pitches, 0.0f);
    g.offset.assign(frames * pitches, 0.0f);
    g.velocity.assign(frames * pitches, 0);
    // distance in seconds from each velocity cell to the onset it came from
    std::vector<double> vel_dist(frames * pitches, -1.0);

    for (const NoteEvent& note : notes) {
        validate(note);
        const int64_t p = note.pitch - kPitchMin;
        if (p >= pitches) {
            throw std::invalid_argument("notes_to_targets: pitch " + std::to_string(note.pitch) +
                                        " does not fit a " + std::to_string(pitches) +
                                        "-pitch grid");
        }
        for (int64_t t = 0; t < frames; ++t) {
            const double ts = t * hop_s;
            if (ts >= note.onset_s && ts < note.offset_s) g.frame[g.idx(t, p)] = 1.0f;
        }
        stamp_triangle(g.onset, frames, pitches, p, note.onset_s, hop_s, sharpness);
        stamp_triangle(g.offset, frames, pitches, p, note.offset_s, hop_s, sharpness);

        // velocity is set only where this note's onset target reaches 0.5
        const int64_t center = static_cast<int64_t>(std::llround(note.onset_s / hop_s));
        for (int64_t t = center - sharpness; t <= center + sharpness; ++t) {
            if (t < 0 || t >= frames) continue;
            const double dist = std::abs(t * hop_s - note.onset_s);
            const double v = 1.0 - dist / (sharpness * hop_s);
            if (v < 0.5) continue;
            const int64_t i = g.idx(t, p);
            if (vel_dist[i] < 0.0 || dist < vel_dist[i]) {
                g.velocity[i] = static_cast<uint8_t>(note.velocity);
                vel_dist[i] = dist;
            }
        }
    }
    return g;
}

}  // namespace hft
