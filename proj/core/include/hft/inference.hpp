#pragma once

#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "hft/decoder.hpp"
#include "hft/dsp.hpp"
#include "hft/grids.hpp"
#include "hft/model.hpp"

// Chunked inference. Full stride tiles the recording; half stride overlaps
// chunks by 50% and keeps only each chunk's central half (the edge chunks
// also keep their outer quarter) so every output frame is written exactly
// once either way.

namespace hft {

enum class StrideMode { full, half };

StrideMode stride_from_string(const std::string& s);
std::string to_string(StrideMode m);

/// Runs one chunk through a model (or a stub in tests) and returns its
/// (chunk_frames x P) grids.
using ChunkPredictor = std::function<GridRoll(const dsp::Chunk&)>;

/// Eval-mode wrapper around a model; the model must outlive the predictor.
/// Emits the second hierarchy's output when the variant has one.
ChunkPredictor make_model_predictor(const Model<float>& model);

StitchedGrids infer_full_stride(const ChunkPredictor& predict, const dsp::FramedInput& fi,
                                int64_t chunk_frames);

/// chunk_frames must be divisible by 4.
StitchedGrids infer_half_stride(const ChunkPredictor& predict, const dsp::FramedInput& fi,
                                int64_t chunk_frames);

struct PositionErrorProfile {
    int64_t chunk_frames = 0;
    // mean squared error by within-chunk position, one entry per position
    std::vector<double> frame, onset, offset, velocity;
};

struct LabeledFeatures {
    dsp::LogMelSpectrogram features;
    TargetGrids targets;
};

/// Mean squared error against the targets at each within-chunk position,
/// per head, averaged over full-stride chunks and pitches. Velocity
/// compares argmax class / 127 with label class / 127. Padded tail
/// positions only average over the chunks that reach them.
PositionErrorProfile position_error_profile(const ChunkPredictor& predict,
                                            std::span<const LabeledFeatures> dataset,
                                            int64_t chunk_frames, int64_t margin);

/// resample -> log-mel -> margin framing -> stride inference -> decode.
std::vector<NoteEvent> transcribe(const dsp::Waveform& w, const Model<float>& model,
                                  StrideMode stride, const dsp::MelConfig& mel = {},
                                  const DecodeOptions& decode = {});

}  // namespace hft
