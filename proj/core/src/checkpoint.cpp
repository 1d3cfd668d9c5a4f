#include "hft/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace hft {

using nlohmann::json;

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_u32le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const uint8_t* p;
    const uint8_t* end;
    std::string path;

    void need(size_t n) const {
        if (p + n > end) throw std::runtime_error(path + ": truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        return v;
    }
    std::string str(uint32_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        return s;
    }
    bool at_end() const { return p == end; }
};

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
    json j{{"variant", to_string(cfg.variant)},
           {"chunk_frames", cfg.chunk_frames},
           {"margin", cfg.margin},
           {"mel_bins", cfg.mel_bins},
           {"pitches", cfg.pitches},
           {"conv_channels", cfg.conv_channels},
           {"conv_kernel", cfg.conv_kernel},
           {"embed_dim", cfg.embed_dim},
           {"ff_dim", cfg.ff_dim},
           {"heads", cfg.heads},
           {"layers", cfg.layers},
           {"dropout", cfg.dropout}};
    return j.dump();  // object keys are stored sorted: canonical
}

namespace {

ModelConfig model_config_from(const json& j) {
    ModelConfig cfg;
    if (j.contains("variant")) cfg.variant = variant_from_string(j.at("variant").get<std::string>());
    cfg.chunk_frames = j.value("chunk_frames", cfg.chunk_frames);
    cfg.margin = j.value("margin", cfg.margin);
    cfg.mel_bins = j.value("mel_bins", cfg.mel_bins);
    cfg.pitches = j.value("pitches", cfg.pitches);
    cfg.conv_channels = j.value("conv_channels", cfg.conv_channels);
    cfg.conv_kernel = j.value("conv_kernel", cfg.conv_kernel);
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.ff_dim = j.value("ff_dim", cfg.ff_dim);
    cfg.heads = j.value("heads", cfg.heads);
    cfg.layers = j.value("layers", cfg.layers);
    cfg.dropout = j.value("dropout", cfg.dropout);
    cfg.validate();
    return cfg;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
    return model_config_from(json::parse(text));
}

void save_checkpoint(const Weights<float>& w, const ModelConfig& cfg, const std::string& path) {
    const std::string cfg_json = model_config_to_json(cfg);
    std::string out = "HFTC";
    put_u32le(out, kCheckpointVersion);
    put_u32le(out, static_cast<uint32_t>(cfg_json.size()));
    out += cfg_json;
    for (const auto& name : w.order) {
        const auto& t = w.at(name);
        put_u32le(out, static_cast<uint32_t>(name.size()));
        out += name;
        put_u32le(out, static_cast<uint32_t>(t.rank()));
        for (const int64_t e : t.shape()) put_u32le(out, static_cast<uint32_t>(e));
        for (const float v : t.values()) {
            uint32_t u;
            std::memcpy(&u, &v, 4);
            put_u32le(out, u);
        }
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::pair<Weights<float>, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "HFTC", 4) != 0) {
        throw std::runtime_error(path + ": not a checkpoint (missing HFTC magic)");
    }
    Reader r{bytes.data() + 4, bytes.data() + bytes.size(), path};
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    }
    const uint32_t cfg_len = r.u32();
    const ModelConfig cfg = model_config_from_json(r.str(cfg_len));

    std::unordered_map<std::string, nn::Shape> expected;
    for (const auto& [name, shape] : parameter_spec(cfg)) expected.emplace(name, shape);

    Weights<float> w;
    std::set<std::string> seen;
    while (!r.at_end()) {
        const uint32_t name_len = r.u32();
        const std::string name = r.str(name_len);
        const uint32_t rank = r.u32();
        nn::Shape shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = r.u32();

        const auto it = expected.find(name);
        if (it == expected.end()) {
            throw std::runtime_error(path + ": unexpected parameter '" + name + "'");
        }
        if (it->second != shape) {
            throw std::runtime_error(path + ": parameter '" + name + "' has shape " +
                                     nn::shape_str(shape) + ", config expects " +
                                     nn::shape_str(it->second));
        }
        if (!seen.insert(name).second) {
            throw std::runtime_error(path + ": duplicate parameter '" + name + "'");
        }
        const int64_t count = nn::numel(shape);
        std::vector<float> values(count);
        r.need(count * 4);
        for (int64_t i = 0; i < count; ++i) {
            uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(r.p[4 * i + b]) << (8 * b);
            std::memcpy(&values[i], &u, 4);
        }
        r.p += count * 4;
        w.insert(name, nn::Tensor<float>::from(shape, std::move(values), /*requires_grad=*/true));
    }
    if (seen.size() != expected.size()) {
        throw std::runtime_error(path + ": checkpoint holds " + std::to_string(seen.size()) +
                                 " parameters, config expects " +
                                 std::to_string(expected.size()));
    }
    return {std::move(w), cfg};
}

AppConfig app_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(std::string("config JSON: ") + e.what());
    }
    AppConfig cfg;
    if (j.contains("model")) cfg.model = model_config_from(j.at("model"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        auto& tc = cfg.train;
        tc.batch = t.value("batch", tc.batch);
        tc.lr = t.value("lr", tc.lr);
        tc.beta1 = t.value("beta1", tc.beta1);
        tc.beta2 = t.value("beta2", tc.beta2);
        tc.adam_eps = t.value("adam_eps", tc.adam_eps);
        tc.clip_norm = t.value("clip_norm", tc.clip_norm);
        tc.dropout = t.value("dropout", tc.dropout);
        tc.loss_weight_first = t.value("loss_weight_first", tc.loss_weight_first);
        tc.loss_weight_second = t.value("loss_weight_second", tc.loss_weight_second);
        tc.epochs = t.value("epochs", tc.epochs);
        tc.seed = t.value("seed", tc.seed);
        tc.plateau_patience = t.value("plateau_patience", tc.plateau_patience);
        tc.plateau_factor = t.value("plateau_factor", tc.plateau_factor);
        tc.plateau_threshold = t.value("plateau_threshold", tc.plateau_threshold);
        tc.max_steps = t.value("max_steps", tc.max_steps);
        tc.stop_at_note_f1 = t.value("stop_at_note_f1", tc.stop_at_note_f1);
        tc.eval_every = t.value("eval_every", tc.eval_every);
        tc.validate();
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        auto& dc = cfg.data;
        dc.clips = d.value("clips", dc.clips);
        dc.seconds = d.value("seconds", dc.seconds);
        dc.val_clips = d.value("val_clips", dc.val_clips);
        dc.seed = d.value("seed", dc.seed);
        auto& s = dc.synth;
        s.notes_per_clip = d.value("notes_per_clip", s.notes_per_clip);
        s.pitch_min = d.value("pitch_min", s.pitch_min);
        s.pitch_max = d.value("pitch_max", s.pitch_max);
        s.min_duration_s = d.value("min_duration_s", s.min_duration_s);
        s.max_duration_s = d.value("max_duration_s", s.max_duration_s);
        s.velocity_min = d.value("velocity_min", s.velocity_min);
        s.velocity_max = d.value("velocity_max", s.velocity_max);
        s.noise_db = d.value("noise_db", s.noise_db);
    }
    // half-stride inference needs chunk_frames divisible by 4; reject early
    if (cfg.model.chunk_frames % 4 != 0) {
        throw std::runtime_error("config: chunk_frames " + std::to_string(cfg.model.chunk_frames) +
                                 " must be divisible by 4");
    }
    return cfg;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return app_config_from_json(text);
}

}  // namespace hft
