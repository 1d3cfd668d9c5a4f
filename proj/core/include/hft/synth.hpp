#pragma once

#include <cstdint>
#include <vector>

#include "hft/dsp.hpp"
#include "hft/targets.hpp"

// Synthetic training material: random piano-register notes rendered as
// decaying harmonic stacks over a quiet noise floor. Stands in for real
// datasets so the pipeline can be trained and evaluated hermetically.

namespace hft {

struct LabeledClip {
    dsp::Waveform audio;
    std::vector<NoteEvent> notes;
};

struct SynthOptions {
    int notes_per_clip = 24;
    int pitch_min = kPitchMin;
    int pitch_max = kPitchMax;
    double min_duration_s = 0.2;
    double max_duration_s = 1.0;
    int velocity_min = 30;
    int velocity_max = 110;
    double noise_db = -40.0;  // relative to full scale
    int sample_rate = 16000;
    int harmonics = 4;
};

/// Deterministic per seed. Notes never overlap on the same pitch; audio is
/// a sum of `harmonics` sines with 1/h rolloff, a 2 ms attack ramp,
/// exponential decay and a short release at the offset, with velocity
/// scaling the amplitude.
std::vector<LabeledClip> make_synthetic_dataset(uint64_t seed, int n_clips, double clip_seconds,
                                                const SynthOptions& options = {});

}  // namespace hft
