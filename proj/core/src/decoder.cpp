#include "hft/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace hft {

GridRoll grids_from_targets(const TargetGrids& t) {
    GridRoll g;
    g.frames = t.frames;
    g.pitches = t.pitches;
    g.frame = t.frame;
    g.onset = t.onset;
    g.offset = t.offset;
    g.velocity = t.velocity;
    return g;
}

std::vector<int64_t> find_local_maxima(std::span<const float> seq, float thresh) {
    std::vector<int64_t> peaks;
    const int64_t n = static_cast<int64_t>(seq.size());
    for (int64_t t = 0; t < n; ++t) {
        const float v = seq[t];
        if (v < thresh) continue;
        const float left = t > 0 ? seq[t - 1] : 0.0f;
        if (!(v > left)) continue;  // plateaus report their first index
        int64_t r = t;
        while (r + 1 < n && seq[r + 1] == v) ++r;
        const float right = r + 1 < n ? seq[r + 1] : 0.0f;
        if (v > right) peaks.push_back(t);
    }
    return peaks;
}

double refine_peak_time(double a, double b, double c) {
    double delta = 0.0;
    if (c > a) {
        const double d = 2.0 * (b - a);
        delta = d > 0.0 ? (c - a) / d : 0.0;
    } else if (a > c) {
        const double d = 2.0 * (b - c);
        delta = d > 0.0 ? (c - a) / d : 0.0;
    }
    return std::clamp(delta, -0.5, 0.5);
}

namespace {

struct Peak {
    int64_t t = 0;
    float value = 0.0f;
    double time_s = 0.0;
};

std::vector<Peak> refined_peaks(std::span<const float> seq, float thresh, double hop_s) {
    std::vector<Peak> out;
    const int64_t n = static_cast<int64_t>(seq.size());
    for (const int64_t t : find_local_maxima(seq, thresh)) {
        const double a = t > 0 ? seq[t - 1] : 0.0;
        const double b = seq[t];
        const double c = t + 1 < n ? seq[t + 1] : 0.0;
        const double delta = refine_peak_time(a, b, c);
        out.push_back({t, seq[t], (static_cast<double>(t) + delta) * hop_s});
    }
    return out;
}

/// Drops peaks closer than min_gap frames to a kept neighbor, keeping the
/// higher value (the earlier one on ties).
std::vector<Peak> enforce_min_gap(std::vector<Peak> peaks, int64_t min_gap) {
    if (min_gap <= 1) return peaks;
    std::vector<Peak> kept;
    for (const Peak& p : peaks) {
        if (!kept.empty() && p.t - kept.back().t < min_gap) {
            if (p.value > kept.back().value) kept.back() = p;
        } else {
            kept.push_back(p);
        }
    }
    return kept;
}

}  // namespace

std::vector<NoteEvent> decode_notes(const GridRoll& grids, const DecodeOptions& opts) {
    const int64_t T = grids.frames, P = grids.pitches;
    const double hop = opts.hop_seconds;
    std::vector<NoteEvent> notes;

    std::vector<float> onset_col(T), offset_col(T);
    for (int64_t p = 0; p < P; ++p) {
        for (int64_t t = 0; t < T; ++t) {
            onset_col[t] = grids.onset[grids.idx(t, p)];
            offset_col[t] = grids.offset[grids.idx(t, p)];
        }
        const auto onsets =
            enforce_min_gap(refined_peaks(onset_col, opts.threshold, hop),
                            opts.min_onset_gap_frames);
        const auto offsets = refined_peaks(offset_col, opts.threshold, hop);

        for (size_t i = 0; i < onsets.size(); ++i) {
            const Peak& on = onsets[i];
            const uint8_t vel_class = grids.velocity[grids.idx(on.t, p)];
            if (vel_class == 0) continue;  // zero velocity drops the onset

            // offset head: earliest refined peak after the onset
            std::optional<double> head_offset;
            for (const Peak& off : offsets) {
                if (off.time_s > on.time_s) {
                    head_offset = off.time_s;
                    break;
                }
            }
            // frame head: first frame after the onset that falls below 0.5
            std::optional<double> frame_offset;
            for (int64_t t = on.t + 1; t < T; ++t) {
                if (grids.frame[grids.idx(t, p)] < 0.5f) {
                    frame_offset = static_cast<double>(t) * hop;
                    break;
                }
            }

            double offset_s;
            if (head_offset && frame_offset) {
                offset_s = std::min(*head_offset, *frame_offset);
            } else if (head_offset) {
                offset_s = *head_offset;
            } else if (frame_offset) {
                offset_s = *frame_offset;
            } else if (i + 1 < onsets.size()) {
                offset_s = onsets[i + 1].time_s;  // close at the next onset
            } else {
                offset_s = static_cast<double>(T) * hop;  // recording end
            }
            if (offset_s <= on.time_s) continue;

            NoteEvent note;
            note.pitch = static_cast<int>(p) + kPitchMin;
            note.onset_s = on.time_s;
            note.offset_s = offset_s;
            note.velocity = vel_class;
            notes.push_back(note);
        }
    }
    std::sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
        return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.pitch < b.pitch);
    });
    return notes;
}

}  // namespace hft
