#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hft/targets.hpp"

// Transcription scoring: cellwise frame metrics plus note matching at the
// standard tolerances (onset within 50 ms; offset within max(50 ms, 20% of
// the reference duration); velocity within 0.1 after a global scale fit).
// Note matching is a maximum-cardinality bipartite matching over admissible
// pairs, so results are independent of note order.

namespace hft::metrics {

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PRF prf_from_counts(int64_t matched, int64_t n_est, int64_t n_ref);

enum class NoteMatchMode { onset, onset_offset, onset_offset_velocity };

struct NoteTolerances {
    double onset_s = 0.05;
    double offset_min_s = 0.05;
    double offset_ratio = 0.2;
    double velocity = 0.1;
};

/// Pairs (est index, ref index) of a maximum matching. In velocity mode the
/// reference velocities are normalized by their maximum and the estimates
/// are scaled by a least-squares factor fitted over pitch/onset-admissible
/// pairs before the tolerance applies.
std::vector<std::pair<int, int>> match_notes(std::span<const NoteEvent> est,
                                             std::span<const NoteEvent> ref, NoteMatchMode mode,
                                             const NoteTolerances& tol = {});

PRF note_prf(std::span<const NoteEvent> est, std::span<const NoteEvent> ref, NoteMatchMode mode,
             const NoteTolerances& tol = {});

struct BinaryRoll {
    int64_t frames = 0;
    int64_t pitches = 0;
    std::vector<uint8_t> active;  // T x P
};

/// Samples note activity on the hop grid: cell (t, p) set while
/// onset <= t * hop < offset.
BinaryRoll frame_roll(std::span<const NoteEvent> notes, int64_t frames, int64_t pitches,
                      double hop_s = kDefaultHopSeconds);

PRF frame_prf(const BinaryRoll& est, const BinaryRoll& ref);

struct RecordingScores {
    PRF frame;
    PRF note;
    PRF note_offset;
    PRF note_offset_velocity;
};

struct EvalReport {
    std::vector<RecordingScores> per_recording;
    RecordingScores mean;  // arithmetic mean over recordings
};

struct RecordingPair {
    std::vector<NoteEvent> est;
    std::vector<NoteEvent> ref;
};

EvalReport evaluate_recordings(std::span<const RecordingPair> recordings,
                               double hop_s = kDefaultHopSeconds, int64_t pitches = 88,
                               const NoteTolerances& tol = {});

}  // namespace hft::metrics
