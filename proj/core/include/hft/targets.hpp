#pragma once

#include <cstdint>
#include <span>
#include <vector>

// Reference notes and the soft training grids built from them.

namespace hft {

constexpr int kPitchMin = 21;   // A0
constexpr int kPitchMax = 108;  // C8
constexpr int kVelocityClasses = 128;
constexpr double kDefaultHopSeconds = 0.016;

struct NoteEvent {
    int pitch = 60;        // MIDI number, 21..108; grid row = pitch - 21
    double onset_s = 0.0;
    double offset_s = 0.0;
    int velocity = 64;     // 0..127

    bool operator==(const NoteEvent&) const = default;
};

/// Throws std::invalid_argument when a field is out of range.
void validate(const NoteEvent& n);

struct TargetGrids {
    int64_t frames = 0;   // T
    int64_t pitches = 0;  // P
    std::vector<float> frame, onset, offset;  // T x P in [0, 1]
    std::vector<uint8_t> velocity;            // T x P, 0 when gated off

    int64_t idx(int64_t t, int64_t p) const { return t * pitches + p; }

    /// Frames [start, start + n), zero-padded past the end.
    TargetGrids slice_frames(int64_t start, int64_t n) const;
};

/// Builds the training grids: binary frame activity, onset/offset triangles
/// decaying to zero over `sharpness` frames around the exact note times, and
/// velocity present only where the onset target reaches 0.5. Overlapping
/// notes on one pitch combine by max; velocity takes the nearest onset's.
TargetGrids notes_to_targets(std::span<const NoteEvent> notes, int64_t frames,
                             int64_t pitches = 88, double hop_s = kDefaultHopSeconds,
                             int sharpness = 3);

}  // namespace hft
