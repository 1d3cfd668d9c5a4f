#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "hft/checkpoint.hpp"
#include "hft/io.hpp"

using namespace hft;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("hft_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int n = 0;
        return n;
    }
};

void append_u32le(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void append_u16le(std::string& s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string pcm16_wav(const std::vector<int16_t>& samples, int channels, int rate,
                      bool with_extra_chunk = false) {
    std::string data;
    for (const int16_t s : samples) append_u16le(data, static_cast<uint16_t>(s));
    std::string extra;
    if (with_extra_chunk) {
        extra = "LIST";
        append_u32le(extra, 4);
        extra += "INFO";
    }
    std::string out = "RIFF";
    append_u32le(out, static_cast<uint32_t>(4 + 24 + 8 + data.size() + extra.size()));
    out += "WAVE";
    out += "fmt ";
    append_u32le(out, 16);
    append_u16le(out, 1);
    append_u16le(out, static_cast<uint16_t>(channels));
    append_u32le(out, static_cast<uint32_t>(rate));
    append_u32le(out, static_cast<uint32_t>(rate * channels * 2));
    append_u16le(out, static_cast<uint16_t>(channels * 2));
    append_u16le(out, 16);
    out += extra;
    out += "data";
    append_u32le(out, static_cast<uint32_t>(data.size()));
    out += data;
    return out;
}

std::vector<NoteEvent> sample_notes() {
    return {{60, 0.100, 0.500, 64}, {64, 0.250, 0.750, 100}, {60, 1.000, 1.200, 1}};
}

}  // namespace

TEST_SUITE_BEGIN("io");

TEST_CASE("PCM16 mono WAV round-trips sample values") {
    TempDir dir;
    const std::vector<int16_t> samples{0, 16384, -16384, 32767, -32768};
    write_file(dir.file("a.wav"), pcm16_wav(samples, 1, 16000));
    const auto w = io::read_wav(dir.file("a.wav"));
    CHECK(w.sample_rate == 16000);
    REQUIRE(w.samples.size() == samples.size());
    CHECK(w.samples[1] == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(w.samples[2] == doctest::Approx(-0.5).epsilon(1e-4));
}

TEST_CASE("stereo WAV downmixes to the channel mean") {
    TempDir dir;
    // interleaved L/R: (1000, 3000), (-2000, 2000)
    write_file(dir.file("s.wav"), pcm16_wav({1000, 3000, -2000, 2000}, 2, 44100));
    const auto w = io::read_wav(dir.file("s.wav"));
    CHECK(w.sample_rate == 44100);
    REQUIRE(w.samples.size() == 2);
    CHECK(w.samples[0] == doctest::Approx(2000.0 / 32768).epsilon(1e-5));
    CHECK(w.samples[1] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("unknown WAV chunks are skipped") {
    TempDir dir;
    write_file(dir.file("x.wav"), pcm16_wav({100, 200, 300}, 1, 8000, true));
    const auto w = io::read_wav(dir.file("x.wav"));
    CHECK(w.samples.size() == 3);
}

TEST_CASE("float32 WAV reads directly") {
    TempDir dir;
    std::string out = "RIFF";
    std::string data;
    for (const float v : {0.25f, -0.75f}) {
        uint32_t u;
        std::memcpy(&u, &v, 4);
        append_u32le(data, u);
    }
    append_u32le(out, static_cast<uint32_t>(4 + 24 + 8 + data.size()));
    out += "WAVE";
    out += "fmt ";
    append_u32le(out, 16);
    append_u16le(out, 3);  // IEEE float
    append_u16le(out, 1);
    append_u32le(out, 22050);
    append_u32le(out, 22050 * 4);
    append_u16le(out, 4);
    append_u16le(out, 32);
    out += "data";
    append_u32le(out, static_cast<uint32_t>(data.size()));
    out += data;
    write_file(dir.file("f.wav"), out);
    const auto w = io::read_wav(dir.file("f.wav"));
    REQUIRE(w.samples.size() == 2);
    CHECK(w.samples[0] == 0.25f);
    CHECK(w.samples[1] == -0.75f);
}

TEST_CASE("malformed and unsupported WAV files raise") {
    TempDir dir;
    write_file(dir.file("bad.wav"), "RIFFxxxxNOPE");
    CHECK_THROWS_AS(io::read_wav(dir.file("bad.wav")), std::runtime_error);

    // 8-bit PCM is not supported
    std::string out = pcm16_wav({1, 2}, 1, 8000);
    out[34] = 8;  // bits-per-sample byte
    write_file(dir.file("u8.wav"), out);
    CHECK_THROWS_WITH_AS(io::read_wav(dir.file("u8.wav")), doctest::Contains("unsupported"),
                         std::runtime_error);
}

TEST_CASE("wav writer round-trips through the reader") {
    TempDir dir;
    dsp::Waveform w;
    w.sample_rate = 16000;
    for (int i = 0; i < 256; ++i) {
        w.samples.push_back(0.4f * std::sin(2.0 * M_PI * i / 32.0));
    }
    io::write_wav(w, dir.file("w.wav"));
    const auto back = io::read_wav(dir.file("w.wav"));
    REQUIRE(back.samples.size() == w.samples.size());
    for (size_t i = 0; i < w.samples.size(); ++i) {
        CHECK(back.samples[i] == doctest::Approx(w.samples[i]).epsilon(2e-4));
    }
}

TEST_CASE("JSON notes round-trip and ignore unknown fields") {
    const auto notes = sample_notes();
    const auto text = io::notes_to_json(notes);
    const auto back = io::notes_from_json(text);
    REQUIRE(back.size() == notes.size());
    for (size_t i = 0; i < notes.size(); ++i) CHECK(back[i] == notes[i]);

    const auto extra = io::notes_from_json(
        R"([{"pitch": 60, "onset": 0.5, "offset": 1.0, "velocity": 90, "comment": "x"}])");
    REQUIRE(extra.size() == 1);
    CHECK(extra[0].velocity == 90);
}

TEST_CASE("invalid note JSON raises descriptive errors") {
    CHECK_THROWS_AS(io::notes_from_json("{"), std::runtime_error);
    CHECK_THROWS_AS(io::notes_from_json("{}"), std::runtime_error);
    CHECK_THROWS_AS(
        io::notes_from_json(R"([{"pitch": 300, "onset": 0, "offset": 1, "velocity": 5}])"),
        std::invalid_argument);
}

TEST_CASE("MIDI write -> read preserves pitch and velocity, times to the tick") {
    TempDir dir;
    const auto notes = sample_notes();
    io::write_midi(notes, dir.file("n.mid"));
    const auto back = io::read_midi(dir.file("n.mid"));
    REQUIRE(back.size() == notes.size());
    for (size_t i = 0; i < notes.size(); ++i) {
        CHECK(back[i].pitch == notes[i].pitch);
        CHECK(back[i].velocity == notes[i].velocity);
        CHECK(std::abs(back[i].onset_s - notes[i].onset_s) <= 1e-3);
        CHECK(std::abs(back[i].offset_s - notes[i].offset_s) <= 1e-3);
    }
}

TEST_CASE("note-on with velocity zero acts as note-off") {
    TempDir dir;
    // hand-built single-track file: on(60,80)@0, on(60,0)@480 at 120bpm/480div
    std::string track;
    auto push = [&](std::initializer_list<int> bytes) {
        for (const int b : bytes) track.push_back(static_cast<char>(b));
    };
    push({0x00, 0x90, 60, 80});
    push({0x83, 0x60, 0x90, 60, 0});  // delta 480 varint = 0x83 0x60
    push({0x00, 0xFF, 0x2F, 0x00});

    std::string out = "MThd";
    auto be32 = [&](uint32_t v) {
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto be16 = [&](uint16_t v) {
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
    };
    be32(6);
    be16(0);
    be16(1);
    be16(480);
    out += "MTrk";
    be32(static_cast<uint32_t>(track.size()));
    out += track;
    write_file(dir.file("v0.mid"), out);

    const auto notes = io::read_midi(dir.file("v0.mid"));
    REQUIRE(notes.size() == 1);
    CHECK(notes[0].pitch == 60);
    CHECK(notes[0].velocity == 80);
    CHECK(notes[0].onset_s == doctest::Approx(0.0));
    CHECK(notes[0].offset_s == doctest::Approx(0.5));  // 480 ticks at 120 bpm
}

TEST_CASE("tempo changes shift tick-to-second conversion") {
    TempDir dir;
    std::string track;
    auto push = [&](std::initializer_list<int> bytes) {
        for (const int b : bytes) track.push_back(static_cast<char>(b));
    };
    // tempo 1 000 000 us/quarter (60 bpm), note on @0, off after 480 ticks
    push({0x00, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40});
    push({0x00, 0x90, 60, 70});
    push({0x83, 0x60, 0x80, 60, 0});
    push({0x00, 0xFF, 0x2F, 0x00});
    std::string out = "MThd";
    auto be32 = [&](uint32_t v) {
        for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    auto be16 = [&](uint16_t v) {
        out.push_back(static_cast<char>(v >> 8));
        out.push_back(static_cast<char>(v & 0xff));
    };
    be32(6);
    be16(0);
    be16(1);
    be16(480);
    out += "MTrk";
    be32(static_cast<uint32_t>(track.size()));
    out += track;
    write_file(dir.file("t.mid"), out);

    const auto notes = io::read_midi(dir.file("t.mid"));
    REQUIRE(notes.size() == 1);
    CHECK(notes[0].offset_s == doctest::Approx(1.0));  // one quarter at 60 bpm
}

TEST_CASE("read_notes dispatches on content") {
    TempDir dir;
    const auto notes = sample_notes();
    io::write_notes(notes, dir.file("a.json"), io::NoteFileFormat::json);
    io::write_notes(notes, dir.file("a.mid"), io::NoteFileFormat::midi);
    CHECK(io::read_notes(dir.file("a.json")).size() == notes.size());
    CHECK(io::read_notes(dir.file("a.mid")).size() == notes.size());
}

TEST_CASE("checkpoints restore parameter bytes exactly") {
    TempDir dir;
    ModelConfig cfg;
    cfg.chunk_frames = 4;
    cfg.margin = 2;
    cfg.mel_bins = 8;
    cfg.pitches = 5;
    cfg.embed_dim = 8;
    cfg.ff_dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    const auto w = init_model<float>(cfg, 123);
    save_checkpoint(w, cfg, dir.file("m.hftc"));
    const auto [loaded, cfg2] = load_checkpoint(dir.file("m.hftc"));
    CHECK(cfg2 == cfg);
    REQUIRE(loaded.order == w.order);
    for (const auto& name : w.order) {
        const auto a = w.at(name).values();
        const auto b = loaded.at(name).values();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(std::memcmp(&a[i], &b[i], sizeof(float)) == 0);  // bit-exact
        }
    }
}

TEST_CASE("checkpoint loading validates names and shapes") {
    TempDir dir;
    ModelConfig cfg;
    cfg.chunk_frames = 4;
    cfg.margin = 2;
    cfg.mel_bins = 8;
    cfg.pitches = 5;
    cfg.embed_dim = 8;
    cfg.ff_dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    const auto w = init_model<float>(cfg, 1);
    save_checkpoint(w, cfg, dir.file("ok.hftc"));

    // truncate: drops trailing parameters
    std::ifstream in(dir.file("ok.hftc"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    write_file(dir.file("short.hftc"), bytes.substr(0, bytes.size() - 200));
    CHECK_THROWS_AS(load_checkpoint(dir.file("short.hftc")), std::runtime_error);

    write_file(dir.file("junk.hftc"), "not a checkpoint");
    CHECK_THROWS_WITH_AS(load_checkpoint(dir.file("junk.hftc")), doctest::Contains("HFTC"),
                         std::runtime_error);
}

TEST_CASE("feature dumps carry the HFTF header and float32 payload") {
    TempDir dir;
    dsp::LogMelSpectrogram s;
    s.frames = 3;
    s.bins = 2;
    s.data = {0.0f, -1.5f, 2.25f, -23.02f, 7.0f, 0.125f};
    io::write_features(s, dir.file("f.bin"));

    std::ifstream in(dir.file("f.bin"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 16 + 6 * 4);
    CHECK(bytes.compare(0, 4, "HFTF") == 0);
    CHECK(static_cast<uint8_t>(bytes[4]) == 3);  // frames, little-endian
    CHECK(static_cast<uint8_t>(bytes[8]) == 2);  // bins

    const auto back = io::read_features(dir.file("f.bin"));
    CHECK(back.frames == 3);
    CHECK(back.bins == 2);
    CHECK(back.data == s.data);
}

TEST_CASE("model config JSON is canonical and round-trips") {
    ModelConfig cfg;
    cfg.variant = Variant::freq_linear_time;
    cfg.layers = 2;
    const auto text = model_config_to_json(cfg);
    CHECK(model_config_from_json(text) == cfg);
    CHECK(text == model_config_to_json(cfg));  // stable bytes
}

TEST_CASE("app config files accept partial sections") {
    TempDir dir;
    write_file(dir.file("cfg.json"), R"({
      "model": {"chunk_frames": 16, "margin": 4, "mel_bins": 32, "pitches": 24,
                 "embed_dim": 16, "ff_dim": 32, "heads": 2, "layers": 1},
      "train": {"batch": 2, "lr": 0.001, "epochs": 3, "seed": 9},
      "data": {"clips": 2, "seconds": 3.0, "notes_per_clip": 5}
    })");
    const auto cfg = load_config(dir.file("cfg.json"));
    CHECK(cfg.model.chunk_frames == 16);
    CHECK(cfg.train.batch == 2);
    CHECK(cfg.train.beta1 == 0.9);  // untouched default
    CHECK(cfg.data.clips == 2);
    CHECK(cfg.mel_config().n_mels == 32);
}

TEST_CASE("config validation rejects chunk lengths unusable by half stride") {
    TempDir dir;
    write_file(dir.file("bad.json"), R"({"model": {"chunk_frames": 30}})");
    CHECK_THROWS_WITH_AS(load_config(dir.file("bad.json")), doctest::Contains("divisible"),
                         std::runtime_error);
}

TEST_SUITE_END();
