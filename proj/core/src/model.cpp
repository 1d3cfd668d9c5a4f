#include "hft/model.hpp"

#include <cmath>
#include <stdexcept>

#include "hft/targets.hpp"

namespace hft {

using nn::Shape;
using nn::Tensor;

Variant variant_from_string(const std::string& s) {
    if (s == "1-F-D-T") return Variant::freq_decoder_time;
    if (s == "1-F-D-N") return Variant::freq_decoder_none;
    if (s == "2-F-D-T") return Variant::conv2d_decoder_time;
    if (s == "1-F-L-T") return Variant::freq_linear_time;
    throw std::invalid_argument("unknown model variant '" + s +
                                "' (expected 1-F-D-T, 1-F-D-N, 2-F-D-T or 1-F-L-T)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::freq_decoder_time: return "1-F-D-T";
        case Variant::freq_decoder_none: return "1-F-D-N";
        case Variant::conv2d_decoder_time: return "2-F-D-T";
        case Variant::freq_linear_time: return "1-F-L-T";
    }
    throw std::logic_error("bad variant");
}

void ModelConfig::validate() const {
    if (variant == Variant::conv2d_decoder_time) {
        throw std::invalid_argument(
            "variant 2-F-D-T is not supported: its 2-D convolutional block is unspecified");
    }
    auto positive = [](int64_t v, const char* what) {
        if (v < 1) {
            throw std::invalid_argument(std::string("model config: ") + what +
                                        " must be >= 1, got " + std::to_string(v));
        }
    };
    positive(chunk_frames, "chunk_frames");
    positive(mel_bins, "mel_bins");
    positive(pitches, "pitches");
    positive(conv_channels, "conv_channels");
    positive(conv_kernel, "conv_kernel");
    positive(embed_dim, "embed_dim");
    positive(ff_dim, "ff_dim");
    positive(heads, "heads");
    positive(layers, "layers");
    if (margin < 0) throw std::invalid_argument("model config: margin must be >= 0");
    if (conv_kernel > window()) {
        throw std::invalid_argument("model config: conv_kernel " + std::to_string(conv_kernel) +
                                    " exceeds margin window " + std::to_string(window()));
    }
    if (embed_dim % heads != 0) {
        throw std::invalid_argument("model config: embed_dim " + std::to_string(embed_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("model config: dropout must be in [0, 1)");
    }
}

namespace {

void push_linear(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
                 int64_t in, int64_t n) {
    out.emplace_back(name + ".weight", Shape{in, n});
    out.emplace_back(name + ".bias", Shape{n});
}

void push_norm(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
               int64_t z) {
    out.emplace_back(name + ".gain", Shape{z});
    out.emplace_back(name + ".bias", Shape{z});
}

void push_attention(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                    int64_t z) {
    push_linear(out, prefix + "q", z, z);
    // no key bias: a shared key offset cancels inside the softmax
    out.emplace_back(prefix + "k.weight", Shape{z, z});
    push_linear(out, prefix + "v", z, z);
    push_linear(out, prefix + "out", z, z);
}

void push_encoder_layer(std::vector<std::pair<std::string, Shape>>& out,
                        const std::string& prefix, const ModelConfig& cfg) {
    push_attention(out, prefix + "attn.", cfg.embed_dim);
    push_norm(out, prefix + "norm1", cfg.embed_dim);
    push_linear(out, prefix + "ff.in", cfg.embed_dim, cfg.ff_dim);
    push_linear(out, prefix + "ff.out", cfg.ff_dim, cfg.embed_dim);
    push_norm(out, prefix + "norm2", cfg.embed_dim);
}

void push_heads(std::vector<std::pair<std::string, Shape>>& out, const std::string& prefix,
                const ModelConfig& cfg) {
    push_linear(out, prefix + "frame", cfg.embed_dim, 1);
    push_linear(out, prefix + "onset", cfg.embed_dim, 1);
    push_linear(out, prefix + "offset", cfg.embed_dim, 1);
    push_linear(out, prefix + "velocity", cfg.embed_dim, kVelocityClasses);
}

}  // namespace

std::vector<std::pair<std::string, Shape>> parameter_spec(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, Shape>> out;
    out.emplace_back("conv.weight", Shape{cfg.conv_channels, 1, cfg.conv_kernel});
    out.emplace_back("conv.bias", Shape{cfg.conv_channels});
    push_linear(out, "embed", cfg.conv_channels * cfg.conv_out_len(), cfg.embed_dim);
    out.emplace_back("pos.freq", Shape{cfg.mel_bins, cfg.embed_dim});
    if (cfg.decoder_converter()) {
        out.emplace_back("pos.pitch", Shape{cfg.pitches, cfg.embed_dim});
    }
    if (cfg.has_second_hierarchy()) {
        out.emplace_back("pos.time", Shape{cfg.chunk_frames, cfg.embed_dim});
    }
    for (int64_t i = 0; i < cfg.layers; ++i) {
        push_encoder_layer(out, "freq_enc." + std::to_string(i) + ".", cfg);
    }
    if (cfg.decoder_converter()) {
        for (int64_t i = 0; i < cfg.layers; ++i) {
            const std::string prefix = "converter." + std::to_string(i) + ".";
            push_attention(out, prefix + "self_attn.", cfg.embed_dim);
            push_norm(out, prefix + "norm1", cfg.embed_dim);
            push_attention(out, prefix + "cross_attn.", cfg.embed_dim);
            push_norm(out, prefix + "norm2", cfg.embed_dim);
            push_linear(out, prefix + "ff.in", cfg.embed_dim, cfg.ff_dim);
            push_linear(out, prefix + "ff.out", cfg.ff_dim, cfg.embed_dim);
            push_norm(out, prefix + "norm3", cfg.embed_dim);
        }
    } else {
        push_linear(out, "converter", cfg.mel_bins, cfg.pitches);
    }
    if (cfg.has_second_hierarchy()) {
        for (int64_t i = 0; i < cfg.layers; ++i) {
            push_encoder_layer(out, "time_enc." + std::to_string(i) + ".", cfg);
        }
    }
    push_heads(out, "head1.", cfg);
    if (cfg.has_second_hierarchy()) push_heads(out, "head2.", cfg);
    return out;
}

int64_t param_count(const ModelConfig& cfg) {
    int64_t n = 0;
    for (const auto& [name, shape] : parameter_spec(cfg)) n += nn::numel(shape);
    return n;
}

// --- Weights -----------------------------------------------------------------

template <class S>
void Weights<S>::insert(const std::string& name, Tensor<S> t) {
    if (map.count(name) != 0) throw std::invalid_argument("duplicate parameter " + name);
    order.push_back(name);
    map.emplace(name, std::move(t));
}

template <class S>
Tensor<S>& Weights<S>::at(const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
}

template <class S>
const Tensor<S>& Weights<S>::at(const std::string& name) const {
    auto it = map.find(name);
    if (it == map.end()) throw std::invalid_argument("unknown parameter " + name);
    return it->second;
}

template <class S>
int64_t Weights<S>::total_params() const {
    int64_t n = 0;
    for (const auto& name : order) n += map.at(name).size();
    return n;
}

template <class S>
std::vector<std::pair<std::string, Tensor<S>>> Weights<S>::named() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.reserve(order.size());
    for (const auto& name : order) out.emplace_back(name, map.at(name));
    return out;
}

template <class S>
Weights<S> init_model(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    Weights<S> w;
    for (const auto& [name, shape] : parameter_spec(cfg)) {
        std::vector<S> v(nn::numel(shape));
        const bool is_positional = name.rfind("pos.", 0) == 0;
        const bool is_gain = name.size() >= 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
        const bool is_weight =
            name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
        if (is_positional) {
            for (auto& x : v) x = static_cast<S>(rng.normal(0.0, 0.02));
        } else if (is_gain) {
            std::fill(v.begin(), v.end(), S(1));
        } else if (is_weight) {
            // fan_in: everything but the last axis for linears, all but the
            // first for the conv kernel
            int64_t fan_in = 1;
            if (name == "conv.weight") {
                fan_in = shape[1] * shape[2];
            } else {
                for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
            }
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& x : v) x = static_cast<S>(rng.uniform(-bound, bound));
        }  // biases stay zero
        w.insert(name, Tensor<S>::from(shape, std::move(v), /*requires_grad=*/true));
    }
    return w;
}

// --- forward pieces -------------------------------------------------------------

namespace {

template <class S>
Tensor<S> linear(const Weights<S>& w, const std::string& name, const Tensor<S>& x) {
    return nn::add(nn::matmul(x, w.at(name + ".weight")), w.at(name + ".bias"));
}

template <class S>
Tensor<S> norm(const Weights<S>& w, const std::string& name, const Tensor<S>& x) {
    return nn::add(nn::mul(nn::layer_norm(x, -1), w.at(name + ".gain")), w.at(name + ".bias"));
}

template <class S>
Tensor<S> maybe_dropout(const Tensor<S>& x, const ModelConfig& cfg,
                        const ForwardOptions<S>& opts) {
    if (!opts.train || cfg.dropout == 0.0) return x;
    if (opts.rng == nullptr) {
        throw std::invalid_argument("forward: train mode with dropout needs an rng");
    }
    return nn::dropout(x, cfg.dropout, true, *opts.rng);
}

/// Multi-head attention; q_in (B, Lq, Z) attends over kv_in (B, Lk, Z).
template <class S>
Tensor<S> attention(const Weights<S>& w, const std::string& prefix, const ModelConfig& cfg,
                    const Tensor<S>& q_in, const Tensor<S>& kv_in,
                    const ForwardOptions<S>& opts) {
    const int64_t B = q_in.extent(0), Lq = q_in.extent(1);
    const int64_t Lk = kv_in.extent(1);
    const int64_t H = cfg.heads, Z = cfg.embed_dim, D = Z / H;

    auto split = [&](const Tensor<S>& t, int64_t L) {
        auto s = nn::reshape(t, Shape{B, L, H, D});
        s = nn::permute(s, {0, 2, 1, 3});
        return nn::reshape(s, Shape{B * H, L, D});
    };
    const auto q = split(linear(w, prefix + "q", q_in), Lq);
    const auto k = split(nn::matmul(kv_in, w.at(prefix + "k.weight")), Lk);
    const auto v = split(linear(w, prefix + "v", kv_in), Lk);

    auto scores = nn::scale(nn::matmul(q, k, /*transpose_b=*/true),
                            static_cast<S>(1.0 / std::sqrt(static_cast<double>(D))));
    auto probs = nn::softmax(scores, -1);
    if (opts.attention_probs != nullptr) opts.attention_probs->push_back(probs);

    auto ctx = nn::matmul(probs, v);  // (B*H, Lq, D)
    ctx = nn::reshape(ctx, Shape{B, H, Lq, D});
    ctx = nn::permute(ctx, {0, 2, 1, 3});
    ctx = nn::reshape(ctx, Shape{B, Lq, Z});
    return linear(w, prefix + "out", ctx);
}

template <class S>
Tensor<S> feed_forward(const Weights<S>& w, const std::string& prefix, const Tensor<S>& x) {
    return linear(w, prefix + "ff.out", nn::relu(linear(w, prefix + "ff.in", x)));
}

/// Post-norm encoder layer over the middle axis of (B, L, Z).
template <class S>
Tensor<S> encoder_layer(const Weights<S>& w, const std::string& prefix, const ModelConfig& cfg,
                        Tensor<S> x, const ForwardOptions<S>& opts) {
    auto h = attention(w, prefix + "attn.", cfg, x, x, opts);
    x = norm(w, prefix + "norm1", nn::add(x, maybe_dropout(h, cfg, opts)));
    auto f = feed_forward(w, prefix, x);
    x = norm(w, prefix + "norm2", nn::add(x, maybe_dropout(f, cfg, opts)));
    return x;
}

template <class S>
Tensor<S> decoder_layer(const Weights<S>& w, const std::string& prefix, const ModelConfig& cfg,
                        Tensor<S> tgt, const Tensor<S>& memory,
                        const ForwardOptions<S>& opts) {
    auto h = attention(w, prefix + "self_attn.", cfg, tgt, tgt, opts);
    tgt = norm(w, prefix + "norm1", nn::add(tgt, maybe_dropout(h, cfg, opts)));
    h = attention(w, prefix + "cross_attn.", cfg, tgt, memory, opts);
    tgt = norm(w, prefix + "norm2", nn::add(tgt, maybe_dropout(h, cfg, opts)));
    auto f = feed_forward(w, prefix, tgt);
    tgt = norm(w, prefix + "norm3", nn::add(tgt, maybe_dropout(f, cfg, opts)));
    return tgt;
}

}  // namespace

template <class S>
Model<S>::Model(ModelConfig cfg, Weights<S> weights) : cfg_(std::move(cfg)), w_(std::move(weights)) {
    cfg_.validate();
    for (const auto& [name, shape] : parameter_spec(cfg_)) {
        if (!w_.contains(name)) throw std::invalid_argument("model: missing parameter " + name);
        if (w_.at(name).shape() != shape) {
            throw std::invalid_argument("model: parameter " + name + " has shape " +
                                        nn::shape_str(w_.at(name).shape()) + ", expected " +
                                        nn::shape_str(shape));
        }
    }
}

template <class S>
Tensor<S> Model<S>::conv_embed(const Tensor<S>& chunk) const {
    if (chunk.rank() != 3 || chunk.extent(1) != cfg_.mel_bins ||
        chunk.extent(2) != cfg_.window()) {
        throw std::invalid_argument("conv_embed: chunk shape " + nn::shape_str(chunk.shape()) +
                                    " does not match config (*, " +
                                    std::to_string(cfg_.mel_bins) + ", " +
                                    std::to_string(cfg_.window()) + ")");
    }
    const int64_t N = chunk.extent(0);
    auto x = nn::reshape(chunk, Shape{N * cfg_.mel_bins, 1, cfg_.window()});
    x = nn::conv1d(x, w_.at("conv.weight"), w_.at("conv.bias"));
    x = nn::relu(x);
    x = nn::reshape(x, Shape{N, cfg_.mel_bins, cfg_.conv_channels * cfg_.conv_out_len()});
    return linear(w_, std::string("embed"), x);
}

template <class S>
Tensor<S> Model<S>::freq_encode(const Tensor<S>& x, const ForwardOptions<S>& opts) const {
    auto y = nn::add(x, w_.at("pos.freq"));
    for (int64_t i = 0; i < cfg_.layers; ++i) {
        y = encoder_layer(w_, "freq_enc." + std::to_string(i) + ".", cfg_, y, opts);
    }
    return y;
}

template <class S>
Tensor<S> Model<S>::convert_freq_to_pitch(const Tensor<S>& x,
                                          const ForwardOptions<S>& opts) const {
    const int64_t N = x.extent(0);
    if (cfg_.decoder_converter()) {
        auto tgt = nn::expand_leading(w_.at("pos.pitch"), N);  // (N, P, Z)
        for (int64_t i = 0; i < cfg_.layers; ++i) {
            tgt = decoder_layer(w_, "converter." + std::to_string(i) + ".", cfg_, tgt, x, opts);
        }
        return tgt;
    }
    // linear converter: map the F axis to P for every embedding coordinate
    auto y = nn::permute(x, {0, 2, 1});                       // (N, Z, F)
    y = nn::add(nn::matmul(y, w_.at("converter.weight")), w_.at("converter.bias"));
    return nn::permute(y, {0, 2, 1});                         // (N, P, Z)
}

template <class S>
Tensor<S> Model<S>::time_encode(const Tensor<S>& x, const ForwardOptions<S>& opts) const {
    if (!cfg_.has_second_hierarchy()) {
        throw std::invalid_argument("time_encode: variant " + to_string(cfg_.variant) +
                                    " has no second hierarchy");
    }
    auto y = nn::permute(x, {1, 0, 2});  // (P, N, Z): attend over time per pitch
    y = nn::add(y, w_.at("pos.time"));
    for (int64_t i = 0; i < cfg_.layers; ++i) {
        y = encoder_layer(w_, "time_enc." + std::to_string(i) + ".", cfg_, y, opts);
    }
    return nn::permute(y, {1, 0, 2});
}

template <class S>
GridOutput<S> Model<S>::heads(const Tensor<S>& x, int hierarchy) const {
    if (hierarchy != 1 && hierarchy != 2) {
        throw std::invalid_argument("heads: hierarchy must be 1 or 2");
    }
    if (hierarchy == 2 && !cfg_.has_second_hierarchy()) {
        throw std::invalid_argument("heads: variant " + to_string(cfg_.variant) +
                                    " has no second hierarchy");
    }
    const std::string prefix = hierarchy == 1 ? "head1." : "head2.";
    const int64_t N = x.extent(0), P = x.extent(1);
    auto posterior = [&](const std::string& name) {
        return nn::sigmoid(nn::reshape(linear(w_, prefix + name, x), Shape{N, P}));
    };
    GridOutput<S> out;
    out.frame = posterior("frame");
    out.onset = posterior("onset");
    out.offset = posterior("offset");
    out.velocity_logits = linear(w_, prefix + "velocity", x);
    return out;
}

template <class S>
ModelOutput<S> Model<S>::forward(const Tensor<S>& chunk, const ForwardOptions<S>& opts) const {
    if (chunk.extent(0) != cfg_.chunk_frames) {
        throw std::invalid_argument("forward: chunk has " + std::to_string(chunk.extent(0)) +
                                    " frames, config expects " +
                                    std::to_string(cfg_.chunk_frames));
    }
    auto x = conv_embed(chunk);
    x = freq_encode(x, opts);
    x = convert_freq_to_pitch(x, opts);
    ModelOutput<S> out;
    out.output_1st = heads(x, 1);
    if (cfg_.has_second_hierarchy()) {
        out.output_2nd = heads(time_encode(x, opts), 2);
    }
    return out;
}

template <class S>
Tensor<S> chunk_tensor(const dsp::Chunk& c) {
    std::vector<S> v(c.data.size());
    for (size_t i = 0; i < c.data.size(); ++i) v[i] = static_cast<S>(c.data[i]);
    return Tensor<S>::from({c.frames, c.bins, c.window}, std::move(v));
}

template struct Weights<float>;
template struct Weights<double>;
template Weights<float> init_model<float>(const ModelConfig&, uint64_t);
template Weights<double> init_model<double>(const ModelConfig&, uint64_t);
template class Model<float>;
template class Model<double>;
template Tensor<float> chunk_tensor<float>(const dsp::Chunk&);
template Tensor<double> chunk_tensor<double>(const dsp::Chunk&);

}  // namespace hft
