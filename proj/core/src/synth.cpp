#include "hft/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hft/common.hpp"

namespace hft {

namespace {

constexpr double kAttackSeconds = 0.002;
constexpr double kReleaseSeconds = 0.005;

double pitch_to_hz(int pitch) { return 440.0 * std::pow(2.0, (pitch - 69) / 12.0); }

bool overlaps_on_pitch(const std::vector<NoteEvent>& notes, int pitch, double on, double off) {
    for (const auto& n : notes) {
        if (n.pitch == pitch && on < n.offset_s && n.onset_s < off) return true;
    }
    return false;
}

void render_note(std::vector<float>& samples, const NoteEvent& note, const SynthOptions& opt) {
    const double f0 = pitch_to_hz(note.pitch);
    const double nyquist = opt.sample_rate / 2.0;
    const double dur = note.offset_s - note.onset_s;
    const double amp = 0.5 * (note.velocity / 127.0);
    const int64_t begin = static_cast<int64_t>(note.onset_s * opt.sample_rate);
    const int64_t end = std::min<int64_t>(static_cast<int64_t>(note.offset_s * opt.sample_rate),
                                          static_cast<int64_t>(samples.size()));
    double weight_sum = 0.0;
    for (int h = 1; h <= opt.harmonics; ++h) {
        if (h * f0 < nyquist) weight_sum += 1.0 / h;
    }
    if (weight_sum == 0.0) return;
    for (int64_t i = std::max<int64_t>(begin, 0); i < end; ++i) {
        const double t = static_cast<double>(i) / opt.sample_rate;
        const double rel = t - note.onset_s;
        double env = std::exp(-3.0 * rel / dur);
        if (rel < kAttackSeconds) env *= rel / kAttackSeconds;
        const double to_end = note.offset_s - t;
        if (to_end < kReleaseSeconds) env *= to_end / kReleaseSeconds;
        double s = 0.0;
        for (int h = 1; h <= opt.harmonics; ++h) {
            const double fh = h * f0;
            if (fh >= nyquist) break;
            s += (1.0 / h) * std::sin(2.0 * M_PI * fh * rel);
        }
        samples[i] += static_cast<float>(amp * env * s / weight_sum);
    }
}

}  // namespace

std::vector<LabeledClip> make_synthetic_dataset(uint64_t seed, int n_clips, double clip_seconds,
                                                const SynthOptions& opt) {
    if (n_clips < 0 || clip_seconds <= 0.0) {
        throw std::invalid_argument("make_synthetic_dataset: bad clip count or length");
    }
    if (opt.pitch_min < kPitchMin || opt.pitch_max > kPitchMax || opt.pitch_min > opt.pitch_max) {
        throw std::invalid_argument("make_synthetic_dataset: pitch range outside piano range");
    }
    Rng rng(seed);
    const double noise_amp = std::pow(10.0, opt.noise_db / 20.0);
    const int64_t n_samples = static_cast<int64_t>(clip_seconds * opt.sample_rate);

    std::vector<LabeledClip> clips(n_clips);
    for (auto& clip : clips) {
        clip.audio.sample_rate = opt.sample_rate;
        clip.audio.samples.assign(n_samples, 0.0f);

        for (int k = 0; k < opt.notes_per_clip; ++k) {
            // rejection-sample onto a free stretch of the chosen pitch
            for (int attempt = 0; attempt < 64; ++attempt) {
                const int pitch = rng.uniform_int(opt.pitch_min, opt.pitch_max);
                const double dur = rng.uniform(opt.min_duration_s, opt.max_duration_s);
                if (dur >= clip_seconds) continue;
                const double onset = rng.uniform(0.0, clip_seconds - dur);
                if (overlaps_on_pitch(clip.notes, pitch, onset, onset + dur)) continue;
                NoteEvent note;
                note.pitch = pitch;
                note.onset_s = onset;
                note.offset_s = onset + dur;
                note.velocity = rng.uniform_int(opt.velocity_min, opt.velocity_max);
                clip.notes.push_back(note);
                break;
            }
        }
        std::sort(clip.notes.begin(), clip.notes.end(), [](const auto& a, const auto& b) {
            return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.pitch < b.pitch);
        });
        for (const auto& note : clip.notes) render_note(clip.audio.samples, note, opt);
        for (auto& s : clip.audio.samples) {
            s += static_cast<float>(noise_amp * rng.uniform(-1.0, 1.0));
        }
    }
    return clips;
}

}  // namespace hft
