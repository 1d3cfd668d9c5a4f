#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hft/dsp.hpp"
#include "hft/tensor.hpp"

// Two-level hierarchical frequency-time Transformer. Hierarchy 1: 1-D conv
// over the margin window, encoder over the frequency axis, and a converter
// from frequency bins to pitches (cross-attention decoder, or a linear map
// in the ablation variant). Hierarchy 2: encoder over the time axis. Each
// hierarchy has sigmoid frame/onset/offset heads and 128-class velocity
// logits.

namespace hft {

enum class Variant {
    freq_decoder_time,   // wire name 1-F-D-T: the full model
    freq_decoder_none,   // 1-F-D-N: no second hierarchy
    conv2d_decoder_time, // 2-F-D-T: unsupported (2-D conv block)
    freq_linear_time,    // 1-F-L-T: linear converter
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
    Variant variant = Variant::freq_decoder_time;
    int64_t chunk_frames = 128;  // N
    int64_t margin = 32;         // M
    int64_t mel_bins = 256;      // F
    int64_t pitches = 88;        // P
    int64_t conv_channels = 4;   // C
    int64_t conv_kernel = 5;     // K
    int64_t embed_dim = 256;     // Z
    int64_t ff_dim = 512;
    int64_t heads = 4;
    int64_t layers = 3;
    double dropout = 0.1;

    int64_t window() const { return 2 * margin + 1; }
    int64_t conv_out_len() const { return window() - conv_kernel + 1; }
    bool has_second_hierarchy() const { return variant != Variant::freq_decoder_none; }
    bool decoder_converter() const { return variant != Variant::freq_linear_time; }

    void validate() const;  // throws on inconsistent extents
    bool operator==(const ModelConfig&) const = default;
};

/// Parameter names and shapes, in serialization order.
std::vector<std::pair<std::string, nn::Shape>> parameter_spec(const ModelConfig& cfg);

/// Exact scalar parameter count (no allocation).
int64_t param_count(const ModelConfig& cfg);

template <class S>
struct Weights {
    std::vector<std::string> order;
    std::unordered_map<std::string, nn::Tensor<S>> map;

    void insert(const std::string& name, nn::Tensor<S> t);
    nn::Tensor<S>& at(const std::string& name);
    const nn::Tensor<S>& at(const std::string& name) const;
    bool contains(const std::string& name) const { return map.count(name) != 0; }
    int64_t total_params() const;
    /// (name, tensor) pairs in serialization order.
    std::vector<std::pair<std::string, nn::Tensor<S>>> named() const;
};

/// Fresh weights: linear/attention ~ U(+-1/sqrt(fan_in)), positional
/// embeddings ~ N(0, 0.02), norms at identity, biases zero. Deterministic
/// per seed.
template <class S>
Weights<S> init_model(const ModelConfig& cfg, uint64_t seed);

template <class S>
struct GridOutput {
    nn::Tensor<S> frame, onset, offset;  // (N, P) sigmoid posteriors
    nn::Tensor<S> velocity_logits;       // (N, P, 128)
};

template <class S>
struct ModelOutput {
    GridOutput<S> output_1st;
    std::optional<GridOutput<S>> output_2nd;  // absent for 1-F-D-N
};

template <class S>
struct ForwardOptions {
    bool train = false;
    Rng* rng = nullptr;  // needed when train and dropout > 0
    std::vector<nn::Tensor<S>>* attention_probs = nullptr;  // test probe
};

template <class S>
class Model {
public:
    Model(ModelConfig cfg, Weights<S> weights);
    static Model randomly_initialized(const ModelConfig& cfg, uint64_t seed) {
        return Model(cfg, init_model<S>(cfg, seed));
    }

    const ModelConfig& config() const { return cfg_; }
    Weights<S>& weights() { return w_; }
    const Weights<S>& weights() const { return w_; }

    /// Training-time override (the config value is the default).
    void set_dropout(double rate) { cfg_.dropout = rate; }

    /// (N, F, 2M+1) -> (N, F, Z): conv over the margin window, ReLU,
    /// flatten, linear embedding.
    nn::Tensor<S> conv_embed(const nn::Tensor<S>& chunk) const;

    /// Adds the frequency positional embedding, then encoder layers over the
    /// F axis, independently per frame.
    nn::Tensor<S> freq_encode(const nn::Tensor<S>& x,
                              const ForwardOptions<S>& opts = {}) const;

    /// (N, F, Z) -> (N, P, Z) via the configured converter.
    nn::Tensor<S> convert_freq_to_pitch(const nn::Tensor<S>& x,
                                        const ForwardOptions<S>& opts = {}) const;

    /// Adds the time positional embedding, then encoder layers over the N
    /// axis, independently per pitch. Errors when the variant has no second
    /// hierarchy.
    nn::Tensor<S> time_encode(const nn::Tensor<S>& x,
                              const ForwardOptions<S>& opts = {}) const;

    GridOutput<S> heads(const nn::Tensor<S>& x, int hierarchy) const;

    ModelOutput<S> forward(const nn::Tensor<S>& chunk,
                           const ForwardOptions<S>& opts = {}) const;

private:
    ModelConfig cfg_;
    Weights<S> w_;
};

/// Chunk data as a (N, F, 2M+1) tensor.
template <class S>
nn::Tensor<S> chunk_tensor(const dsp::Chunk& c);

}  // namespace hft
