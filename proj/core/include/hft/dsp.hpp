#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <vector>

// Audio front end: waveform -> log-mel spectrogram -> margin-framed windows
// -> fixed-length chunks. All pure functions; per-chunk work is independent.

namespace hft::dsp {

struct Waveform {
    std::vector<float> samples;  // mono
    int sample_rate = 16000;
};

struct MelConfig {
    int sample_rate = 16000;
    int n_fft = 2048;
    int win_length = 2048;
    int hop = 256;  // 16 ms at 16 kHz
    int n_mels = 256;
    double f_min = 0.0;
    double f_max = 8000.0;
    float log_floor = 1e-10f;  // values are ln(max(power, log_floor))

    double hop_seconds() const { return static_cast<double>(hop) / sample_rate; }
    int n_freq_bins() const { return n_fft / 2 + 1; }
};

struct LogMelSpectrogram {
    int64_t frames = 0;  // T
    int64_t bins = 0;    // F
    std::vector<float> data;  // T x F row-major
    double hop_seconds = 0.016;
    float pad_value = 0.0f;  // ln(log_floor): what silence looks like

    float at(int64_t t, int64_t f) const { return data[t * bins + f]; }
};

struct FramedInput {
    int64_t frames = 0;   // T
    int64_t bins = 0;     // F
    int64_t window = 0;   // 2M + 1
    int64_t margin = 0;   // M
    std::vector<float> data;  // T x F x (2M+1)

    float at(int64_t t, int64_t f, int64_t w) const {
        return data[(t * bins + f) * window + w];
    }
};

struct Chunk {
    int64_t frames = 0;        // N
    int64_t bins = 0;          // F
    int64_t window = 0;        // 2M + 1
    int64_t start_frame = 0;   // position in the recording
    int64_t valid_frames = 0;  // <= N; the rest is padding
    std::vector<float> data;   // N x F x (2M+1)
};

/// Mean-downmix interleaved multichannel samples to mono.
Waveform downmix(std::span<const float> interleaved, int channels, int sample_rate);

/// Band-limited resampling (polyphase windowed sinc, Kaiser window, 64 zero
/// crossings). Identity when rates already match.
Waveform resample(const Waveform& w, int target_rate);

/// Power spectrogram (Hann window, centered frames, zero padding) projected
/// on a triangular HTK-scale mel bank, natural-log compressed with a floor.
/// T = floor(len / hop) + 1.
LogMelSpectrogram log_mel(const Waveform& w, const MelConfig& cfg = {});

/// Window each frame with `margin` frames of context on both sides;
/// out-of-range positions take the spectrogram pad value.
FramedInput frame_with_margins(const LogMelSpectrogram& s, int64_t margin);

/// Copies frames [start, start + chunk_frames) into a chunk, zero-padding
/// past the end of the recording; valid_frames records the unpadded count.
Chunk chunk_at(const FramedInput& fi, int64_t start, int64_t chunk_frames);

/// Non-overlapping tiling at starts 0, N, 2N, ...
std::vector<Chunk> make_chunks(const FramedInput& fi, int64_t chunk_frames);

/// Instrumentation: counts log_mel invocations (used by tests to confirm
/// different inference strides share one extraction path).
extern std::atomic<uint64_t> log_mel_invocations;

}  // namespace hft::dsp
