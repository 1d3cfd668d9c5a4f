#pragma once

#include <string>
#include <utility>

#include "hft/model.hpp"
#include "hft/synth.hpp"
#include "hft/train.hpp"

// Checkpoints: magic "HFTC", u32 format version, length-prefixed canonical
// config JSON, then one record per parameter (u32 name length, name, u32
// rank, u32 extents, float32 data), all little-endian. Loading validates
// every name and shape against the config.

namespace hft {

void save_checkpoint(const Weights<float>& w, const ModelConfig& cfg, const std::string& path);
std::pair<Weights<float>, ModelConfig> load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct DataConfig {
    int clips = 8;
    double seconds = 10.0;
    int val_clips = 0;  // 0: validate on the training clips
    uint64_t seed = 1;
    SynthOptions synth;
};

struct AppConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;

    dsp::MelConfig mel_config() const {
        dsp::MelConfig mel;
        mel.n_mels = static_cast<int>(model.mel_bins);
        return mel;
    }
};

/// JSON file with optional "model", "train" and "data" sections; missing
/// keys keep their defaults (the built-in defaults are the published
/// training configuration).
AppConfig load_config(const std::string& path);
AppConfig app_config_from_json(const std::string& text);

}  // namespace hft
