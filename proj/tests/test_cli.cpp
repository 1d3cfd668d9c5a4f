#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "hft/checkpoint.hpp"
#include "hft/io.hpp"

using namespace hft;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("hft_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

/// Runs the CLI capturing stdout.
std::pair<int, std::string> run_cli(const std::vector<std::string>& args) {
    std::ostringstream captured;
    auto* old = std::cout.rdbuf(captured.rdbuf());
    const int code = cli::run(args);
    std::cout.rdbuf(old);
    return {code, captured.str()};
}

std::string tiny_checkpoint(const TempDir& dir) {
    ModelConfig cfg;
    cfg.chunk_frames = 8;
    cfg.margin = 2;
    cfg.mel_bins = 8;
    cfg.pitches = 8;
    cfg.embed_dim = 8;
    cfg.ff_dim = 16;
    cfg.heads = 2;
    cfg.layers = 1;
    auto w = init_model<float>(cfg, 3);
    for (const char* name : {"head1.onset.bias", "head2.onset.bias"}) {
        for (auto& v : w.at(name).mut_values()) v = -6.0f;
    }
    const std::string path = dir.file("tiny.hftc");
    save_checkpoint(w, cfg, path);
    return path;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("eval of a file against itself scores 1.0 and exits 0") {
    TempDir dir;
    const std::vector<NoteEvent> notes{{60, 0.1, 0.5, 80}, {72, 1.0, 1.5, 90}};
    io::write_notes(notes, dir.file("a.json"), io::NoteFileFormat::json);

    const auto [code, out] = run_cli({"eval", "--ref", dir.file("a.json"), "--est",
                                      dir.file("a.json")});
    CHECK(code == 0);
    CHECK(out.find("\"f1\": 1.0") != std::string::npos);
}

TEST_CASE("transcribing silence produces a valid empty note file") {
    TempDir dir;
    dsp::Waveform silence;
    silence.sample_rate = 16000;
    silence.samples.assign(16000, 0.0f);
    io::write_wav(silence, dir.file("quiet.wav"));
    const auto ckpt = tiny_checkpoint(dir);

    for (const char* ext : {"out.json", "out.mid"}) {
        const auto [code, out] = run_cli({"transcribe", "--input", dir.file("quiet.wav"),
                                          "--checkpoint", ckpt, "--stride", "half",
                                          "--output", dir.file(ext)});
        CHECK(code == 0);
        CHECK(io::read_notes(dir.file(ext)).empty());
    }
}

TEST_CASE("missing required flags exit with a usage error") {
    const auto [code, out] = run_cli({"transcribe", "--input", "x.wav"});
    CHECK(code == 1);
    const auto [code2, out2] = run_cli({});
    CHECK(code2 == 1);
    const auto [code3, out3] = run_cli({"no-such-command"});
    CHECK(code3 == 1);
}

TEST_CASE("runtime failures exit with code 2") {
    const auto [code, out] =
        run_cli({"eval", "--ref", "/nonexistent.json", "--est", "/nonexistent.json"});
    CHECK(code == 2);
}

TEST_CASE("help requests succeed") {
    const auto [code, out] = run_cli({"--help"});
    CHECK(code == 0);
}

TEST_CASE("features dumps a well-formed HFTF file") {
    TempDir dir;
    dsp::Waveform w;
    w.sample_rate = 16000;
    w.samples.assign(4096, 0.25f);
    io::write_wav(w, dir.file("in.wav"));
    const auto [code, out] = run_cli({"features", "--input", dir.file("in.wav"), "--output",
                                      dir.file("f.bin"), "--mels", "32"});
    CHECK(code == 0);
    const auto s = io::read_features(dir.file("f.bin"));
    CHECK(s.bins == 32);
    CHECK(s.frames == 4096 / 256 + 1);
}

TEST_CASE("train runs end to end deterministically and leaves artifacts") {
    TempDir dir;
    std::ofstream cfg(dir.file("cfg.json"));
    cfg << R"({
      "model": {"chunk_frames": 8, "margin": 2, "mel_bins": 16, "pitches": 16,
                 "embed_dim": 8, "ff_dim": 16, "heads": 2, "layers": 1},
      "train": {"batch": 4, "lr": 0.001, "epochs": 2, "seed": 7},
      "data": {"clips": 1, "seconds": 2.0, "notes_per_clip": 4,
                "pitch_min": 21, "pitch_max": 36}
    })";
    cfg.close();

    auto first_epoch_line = [&](const std::string& out_dir) {
        const auto [code, out] = run_cli({"train", "--config", dir.file("cfg.json"),
                                          "--output", dir.file(out_dir), "--seed", "7"});
        REQUIRE(code == 0);
        std::ifstream log(dir.file(out_dir) + "/train_log.jsonl");
        std::string line;
        std::getline(log, line);
        return line;
    };
    const auto a = first_epoch_line("run_a");
    const auto b = first_epoch_line("run_b");
    CHECK(!a.empty());
    CHECK(a == b);
    CHECK(std::filesystem::exists(dir.file("run_a") + "/model.hftc"));
    // the checkpoint loads back under its stored config
    const auto [w, cfg2] = load_checkpoint(dir.file("run_a") + "/model.hftc");
    CHECK(cfg2.chunk_frames == 8);
}

TEST_CASE("diagnose writes the position-error CSV") {
    TempDir dir;
    const auto ckpt = tiny_checkpoint(dir);
    const auto [code, out] = run_cli({"diagnose", "--checkpoint", ckpt, "--clips", "1",
                                      "--seconds", "2", "--seed", "3", "--output",
                                      dir.file("prof.csv")});
    CHECK(code == 0);
    std::ifstream csv(dir.file("prof.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line.rfind("#", 0) == 0);
    std::getline(csv, line);
    CHECK(line == "position,frame,onset,offset,velocity");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 8);  // chunk_frames of the tiny checkpoint
}

TEST_SUITE_END();
