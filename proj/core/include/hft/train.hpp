#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hft/metrics.hpp"
#include "hft/model.hpp"
#include "hft/optim.hpp"
#include "hft/synth.hpp"

// Mini-batch training over chunked features with per-epoch note-level
// validation, plateau scheduling on the mean F1, and best-checkpoint
// retention.

namespace hft {

struct TrainConfig {
    int batch = 8;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    double dropout = 0.1;            // applied to the model during fit
    double loss_weight_first = 1.0;  // coefficient on the first hierarchy
    double loss_weight_second = 1.0;
    int epochs = 1;
    uint64_t seed = 0;
    int plateau_patience = 10;
    double plateau_factor = 0.1;
    double plateau_threshold = 1e-4;
    int64_t max_steps = 0;        // 0 = no cap
    double stop_at_note_f1 = 0.0; // early stop once validation Note F1 reaches this (0 = off)
    int eval_every = 1;           // validate every k epochs

    void validate() const;
};

struct EpochLog {
    int epoch = 0;
    int64_t steps = 0;     // cumulative optimizer steps
    double lr = 0.0;
    double loss = 0.0;     // mean combined loss per chunk
    double loss_first = 0.0;
    double loss_second = 0.0;
    bool validated = false;
    metrics::RecordingScores val;  // note-level scores on the validation set
    double val_mean_f1 = 0.0;      // mean of the four F1 values
    double seconds = 0.0;

    std::string to_json() const;  // one JSON line
};

struct FitResult {
    Weights<float> best_weights;
    double best_metric = -1.0;
    int best_epoch = -1;
    int64_t total_steps = 0;
    std::vector<EpochLog> log;
    bool reached_stop_f1 = false;
};

/// Trains in place; `best_weights` is a deep copy of the strongest epoch by
/// validation mean F1. Validation falls back to the training clips when
/// `val` is empty. Writes one JSON line per epoch to log_stream if given.
FitResult fit(Model<float>& model, const std::vector<LabeledClip>& train,
              const std::vector<LabeledClip>& val, const TrainConfig& cfg,
              const dsp::MelConfig& mel, std::ostream* log_stream = nullptr);

/// Deep copy of weights (values only, fresh gradient state).
template <class S>
Weights<S> clone_weights(const Weights<S>& w);

}  // namespace hft
