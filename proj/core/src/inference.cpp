#include "hft/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hft {

StrideMode stride_from_string(const std::string& s) {
    if (s == "full") return StrideMode::full;
    if (s == "half") return StrideMode::half;
    throw std::invalid_argument("unknown stride mode '" + s + "' (expected full or half)");
}

std::string to_string(StrideMode m) {
    return m == StrideMode::full ? "full" : "half";
}

namespace {

void check_chunk_grid(const GridRoll& g, int64_t chunk_frames) {
    if (g.frames != chunk_frames || g.pitches < 1) {
        throw std::runtime_error("inference: predictor returned grid of " +
                                 std::to_string(g.frames) + " frames, expected " +
                                 std::to_string(chunk_frames));
    }
}

StitchedGrids make_output(int64_t frames, int64_t pitches) {
    StitchedGrids out;
    out.frames = frames;
    out.pitches = pitches;
    out.frame.assign(frames * pitches, 0.0f);
    out.onset.assign(frames * pitches, 0.0f);
    out.offset.assign(frames * pitches, 0.0f);
    out.velocity.assign(frames * pitches, 0);
    return out;
}

/// Copies chunk-local rows [lo, hi) to global rows starting at start + lo.
void blit(StitchedGrids& out, const GridRoll& g, int64_t start, int64_t lo, int64_t hi) {
    const int64_t P = out.pitches;
    std::copy_n(g.frame.data() + lo * P, (hi - lo) * P, out.frame.data() + (start + lo) * P);
    std::copy_n(g.onset.data() + lo * P, (hi - lo) * P, out.onset.data() + (start + lo) * P);
    std::copy_n(g.offset.data() + lo * P, (hi - lo) * P, out.offset.data() + (start + lo) * P);
    std::copy_n(g.velocity.data() + lo * P, (hi - lo) * P,
                out.velocity.data() + (start + lo) * P);
}

}  // namespace

ChunkPredictor make_model_predictor(const Model<float>& model) {
    const Model<float>* m = &model;
    return [m](const dsp::Chunk& chunk) {
        const auto& cfg = m->config();
        auto out = m->forward(chunk_tensor<float>(chunk));
        const GridOutput<float>& g =
            cfg.has_second_hierarchy() ? *out.output_2nd : out.output_1st;
        GridRoll roll;
        roll.frames = chunk.frames;
        roll.pitches = cfg.pitches;
        roll.frame.assign(g.frame.values().begin(), g.frame.values().end());
        roll.onset.assign(g.onset.values().begin(), g.onset.values().end());
        roll.offset.assign(g.offset.values().begin(), g.offset.values().end());
        roll.velocity.resize(roll.frames * roll.pitches);
        const auto logits = g.velocity_logits.values();
        for (int64_t cell = 0; cell < roll.frames * roll.pitches; ++cell) {
            const float* row = logits.data() + cell * kVelocityClasses;
            int best = 0;
            for (int c = 1; c < kVelocityClasses; ++c) {
                if (row[c] > row[best]) best = c;
            }
            roll.velocity[cell] = static_cast<uint8_t>(best);
        }
        return roll;
    };
}

StitchedGrids infer_full_stride(const ChunkPredictor& predict, const dsp::FramedInput& fi,
                                int64_t chunk_frames) {
    const auto chunks = dsp::make_chunks(fi, chunk_frames);
    StitchedGrids out;
    for (const auto& chunk : chunks) {
        const GridRoll g = predict(chunk);
        check_chunk_grid(g, chunk_frames);
        if (out.frames == 0) out = make_output(fi.frames, g.pitches);
        blit(out, g, chunk.start_frame, 0, chunk.valid_frames);
    }
    return out;
}

StitchedGrids infer_half_stride(const ChunkPredictor& predict, const dsp::FramedInput& fi,
                                int64_t chunk_frames) {
    if (chunk_frames % 4 != 0) {
        throw std::invalid_argument("infer_half_stride: chunk_frames " +
                                    std::to_string(chunk_frames) + " must be divisible by 4");
    }
    const int64_t T = fi.frames;
    const int64_t stride = chunk_frames / 2;
    const int64_t quarter = chunk_frames / 4;

    StitchedGrids out;
    if (T <= chunk_frames) {  // degenerate: one chunk keeps everything
        const auto chunk = dsp::chunk_at(fi, 0, chunk_frames);
        const GridRoll g = predict(chunk);
        check_chunk_grid(g, chunk_frames);
        out = make_output(T, g.pitches);
        blit(out, g, 0, 0, T);
        return out;
    }

    const int64_t n_starts = (T - chunk_frames + stride - 1) / stride + 1;
    for (int64_t k = 0; k < n_starts; ++k) {
        const int64_t start = k * stride;
        const auto chunk = dsp::chunk_at(fi, start, chunk_frames);
        const GridRoll g = predict(chunk);
        check_chunk_grid(g, chunk_frames);
        if (out.frames == 0) out = make_output(T, g.pitches);
        // interior chunks contribute their central half; the first chunk
        // also keeps its head, the last one its tail
        const int64_t lo = k == 0 ? 0 : quarter;
        const int64_t hi = k == n_starts - 1 ? T - start : 3 * quarter;
        blit(out, g, start, lo, hi);
    }
    return out;
}

PositionErrorProfile position_error_profile(const ChunkPredictor& predict,
                                            std::span<const LabeledFeatures> dataset,
                                            int64_t chunk_frames, int64_t margin) {
    if (dataset.empty()) {
        throw std::invalid_argument("position_error_profile: dataset is empty");
    }
    PositionErrorProfile profile;
    profile.chunk_frames = chunk_frames;
    profile.frame.assign(chunk_frames, 0.0);
    profile.onset.assign(chunk_frames, 0.0);
    profile.offset.assign(chunk_frames, 0.0);
    profile.velocity.assign(chunk_frames, 0.0);
    std::vector<int64_t> counts(chunk_frames, 0);  // (chunk, pitch) pairs per position

    for (const auto& item : dataset) {
        const auto fi = dsp::frame_with_margins(item.features, margin);
        if (item.targets.frames != fi.frames) {
            throw std::invalid_argument("position_error_profile: targets cover " +
                                        std::to_string(item.targets.frames) +
                                        " frames, features " + std::to_string(fi.frames));
        }
        const int64_t P = item.targets.pitches;
        for (const auto& chunk : dsp::make_chunks(fi, chunk_frames)) {
            const GridRoll g = predict(chunk);
            check_chunk_grid(g, chunk_frames);
            for (int64_t n = 0; n < chunk.valid_frames; ++n) {
                const int64_t t = chunk.start_frame + n;
                for (int64_t p = 0; p < P; ++p) {
                    const int64_t gi = g.idx(n, p);
                    const int64_t ti = item.targets.idx(t, p);
                    const double df = g.frame[gi] - item.targets.frame[ti];
                    const double don = g.onset[gi] - item.targets.onset[ti];
                    const double doff = g.offset[gi] - item.targets.offset[ti];
                    const double dv =
                        (g.velocity[gi] - static_cast<double>(item.targets.velocity[ti])) / 127.0;
                    profile.frame[n] += df * df;
                    profile.onset[n] += don * don;
                    profile.offset[n] += doff * doff;
                    profile.velocity[n] += dv * dv;
                }
                counts[n] += P;
            }
        }
    }
    for (int64_t n = 0; n < chunk_frames; ++n) {
        if (counts[n] > 0) {
            const double inv = 1.0 / static_cast<double>(counts[n]);
            profile.frame[n] *= inv;
            profile.onset[n] *= inv;
            profile.offset[n] *= inv;
            profile.velocity[n] *= inv;
        }
    }
    return profile;
}

std::vector<NoteEvent> transcribe(const dsp::Waveform& w, const Model<float>& model,
                                  StrideMode stride, const dsp::MelConfig& mel,
                                  const DecodeOptions& decode) {
    const auto& cfg = model.config();
    if (mel.n_mels != cfg.mel_bins) {
        throw std::invalid_argument("transcribe: mel bins " + std::to_string(mel.n_mels) +
                                    " do not match model config " +
                                    std::to_string(cfg.mel_bins));
    }
    const auto resampled = dsp::resample(w, mel.sample_rate);
    const auto features = dsp::log_mel(resampled, mel);
    const auto framed = dsp::frame_with_margins(features, cfg.margin);
    const auto predictor = make_model_predictor(model);
    const StitchedGrids grids = stride == StrideMode::full
                                    ? infer_full_stride(predictor, framed, cfg.chunk_frames)
                                    : infer_half_stride(predictor, framed, cfg.chunk_frames);
    DecodeOptions opts = decode;
    opts.hop_seconds = mel.hop_seconds();
    return decode_notes(grids, opts);
}

}  // namespace hft
