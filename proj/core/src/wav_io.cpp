#include <cstring>
#include <fstream>
#include <stdexcept>

#include "hft/common.hpp"
#include "hft/io.hpp"

namespace hft::io {

namespace {

uint16_t u16le(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void put_u16le(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32le(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                                std::istreambuf_iterator<char>());
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

dsp::Waveform read_wav(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw std::runtime_error(path + ": not a RIFF/WAVE file");
    }

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    bool have_fmt = false;
    const uint8_t* data = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t len = u32le(bytes.data() + pos + 4);
        pos += 8;
        if (pos + len > bytes.size()) {
            throw std::runtime_error(path + ": truncated chunk '" + std::string(id, 4) + "'");
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (len < 16) throw std::runtime_error(path + ": fmt chunk too short");
            const uint8_t* f = bytes.data() + pos;
            format = u16le(f);
            channels = u16le(f + 2);
            rate = u32le(f + 4);
            bits = u16le(f + 14);
            if (format == kFormatExtensible) {
                if (len < 40) throw std::runtime_error(path + ": extensible fmt too short");
                format = u16le(f + 24);  // first bytes of the subformat GUID
            }
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data = bytes.data() + pos;
            data_len = len;
        } else {
            log_warn(path + ": skipping chunk '" + std::string(id, 4) + "'");
        }
        pos += len + (len & 1);  // chunks are word-aligned
    }

    if (!have_fmt) throw std::runtime_error(path + ": missing fmt chunk");
    if (data == nullptr) throw std::runtime_error(path + ": missing data chunk");
    if (channels == 0 || rate == 0) throw std::runtime_error(path + ": bad fmt parameters");

    std::vector<float> interleaved;
    if (format == kFormatPcm && bits == 16) {
        const size_t n = data_len / 2;
        interleaved.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const int16_t s = static_cast<int16_t>(u16le(data + 2 * i));
            interleaved[i] = static_cast<float>(s) / 32768.0f;
        }
    } else if (format == kFormatFloat && bits == 32) {
        const size_t n = data_len / 4;
        interleaved.resize(n);
        for (size_t i = 0; i < n; ++i) {
            const uint32_t u = u32le(data + 4 * i);
            float f;
            std::memcpy(&f, &u, 4);
            interleaved[i] = f;
        }
    } else {
        throw std::runtime_error(path + ": unsupported encoding (format " +
                                 std::to_string(format) + ", " + std::to_string(bits) +
                                 " bits); expected PCM16 or float32");
    }
    return dsp::downmix(interleaved, channels, static_cast<int>(rate));
}

void write_wav(const dsp::Waveform& w, const std::string& path) {
    std::string out;
    const uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
    out += "RIFF";
    put_u32le(out, 36 + data_len);
    out += "WAVE";
    out += "fmt ";
    put_u32le(out, 16);
    put_u16le(out, kFormatPcm);
    put_u16le(out, 1);  // mono
    put_u32le(out, static_cast<uint32_t>(w.sample_rate));
    put_u32le(out, static_cast<uint32_t>(w.sample_rate * 2));
    put_u16le(out, 2);
    put_u16le(out, 16);
    out += "data";
    put_u32le(out, data_len);
    for (const float s : w.samples) {
        const float clamped = std::min(1.0f, std::max(-1.0f, s));
        const int16_t q = static_cast<int16_t>(std::lrintf(clamped * 32767.0f));
        put_u16le(out, static_cast<uint16_t>(q));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void write_features(const dsp::LogMelSpectrogram& s, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    std::string header = "HFTF";
    put_u32le(header, static_cast<uint32_t>(s.frames));
    put_u32le(header, static_cast<uint32_t>(s.bins));
    put_u32le(header, 0);  // reserved
    f.write(header.data(), 16);
    std::string body;
    body.reserve(s.data.size() * 4);
    for (const float v : s.data) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        put_u32le(body, u);
    }
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
}

dsp::LogMelSpectrogram read_features(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "HFTF", 4) != 0) {
        throw std::runtime_error(path + ": not a feature dump (missing HFTF magic)");
    }
    dsp::LogMelSpectrogram s;
    s.frames = u32le(bytes.data() + 4);
    s.bins = u32le(bytes.data() + 8);
    const size_t need = 16 + static_cast<size_t>(s.frames) * s.bins * 4;
    if (bytes.size() < need) throw std::runtime_error(path + ": truncated feature dump");
    s.data.resize(s.frames * s.bins);
    for (size_t i = 0; i < s.data.size(); ++i) {
        const uint32_t u = u32le(bytes.data() + 16 + 4 * i);
        std::memcpy(&s.data[i], &u, 4);
    }
    return s;
}

}  // namespace hft::io
