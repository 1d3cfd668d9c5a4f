#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hft/checkpoint.hpp"
#include "hft/common.hpp"
#include "hft/inference.hpp"
#include "hft/io.hpp"
#include "hft/metrics.hpp"
#include "hft/train.hpp"

namespace hft::cli {

namespace {

using nlohmann::json;

json prf_json(const metrics::PRF& s) {
    return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

json scores_json(const metrics::RecordingScores& s) {
    return {{"frame", prf_json(s.frame)},
            {"note", prf_json(s.note)},
            {"note_offset", prf_json(s.note_offset)},
            {"note_offset_velocity", prf_json(s.note_offset_velocity)}};
}

void print_score_table(const metrics::EvalReport& report, std::ostream& os) {
    auto row = [&](const std::string& label, const metrics::RecordingScores& s) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-12s %7.2f %7.2f %7.2f  %7.2f %7.2f %7.2f  %7.2f %7.2f %7.2f  %7.2f %7.2f %7.2f",
                      label.c_str(), 100 * s.frame.precision, 100 * s.frame.recall,
                      100 * s.frame.f1, 100 * s.note.precision, 100 * s.note.recall,
                      100 * s.note.f1, 100 * s.note_offset.precision, 100 * s.note_offset.recall,
                      100 * s.note_offset.f1, 100 * s.note_offset_velocity.precision,
                      100 * s.note_offset_velocity.recall, 100 * s.note_offset_velocity.f1);
        os << buf << "\n";
    };
    os << "             ---------Frame---------  ----------Note---------  "
          "-----Note w/ Offset----  Note w/ Offset&Velocity\n";
    os << "             P(%)    R(%)    F1(%)    P(%)    R(%)    F1(%)    "
          "P(%)    R(%)    F1(%)    P(%)    R(%)    F1(%)\n";
    for (size_t i = 0; i < report.per_recording.size(); ++i) {
        row("rec " + std::to_string(i), report.per_recording[i]);
    }
    row("mean", report.mean);
}

io::NoteFileFormat format_for(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".mid" || ext == ".midi") return io::NoteFileFormat::midi;
    return io::NoteFileFormat::json;
}

int cmd_transcribe(const std::string& input, const std::string& checkpoint,
                   const std::string& stride, const std::string& output) {
    auto [weights, cfg] = load_checkpoint(checkpoint);
    Model<float> model(cfg, std::move(weights));
    dsp::MelConfig mel;
    mel.n_mels = static_cast<int>(cfg.mel_bins);
    const auto wave = io::read_wav(input);
    const auto notes = transcribe(wave, model, stride_from_string(stride), mel);
    io::write_notes(notes, output, format_for(output));
    std::cout << json{{"notes", notes.size()}, {"output", output}}.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, int64_t seed_override) {
    AppConfig cfg = load_config(config_path);
    if (seed_override >= 0) cfg.train.seed = static_cast<uint64_t>(seed_override);

    const auto train_clips = make_synthetic_dataset(cfg.data.seed, cfg.data.clips,
                                                    cfg.data.seconds, cfg.data.synth);
    std::vector<LabeledClip> val_clips;
    if (cfg.data.val_clips > 0) {
        val_clips = make_synthetic_dataset(cfg.data.seed + 1, cfg.data.val_clips,
                                           cfg.data.seconds, cfg.data.synth);
    }

    std::filesystem::create_directories(out_dir);
    const std::string log_path = out_dir + "/train_log.jsonl";
    const std::string ckpt_path = out_dir + "/model.hftc";
    std::ofstream log_stream(log_path);
    if (!log_stream) throw std::runtime_error("cannot write " + log_path);

    auto model = Model<float>::randomly_initialized(cfg.model, cfg.train.seed);
    const auto result = fit(model, train_clips, val_clips, cfg.train, cfg.mel_config(),
                            &log_stream);
    save_checkpoint(result.best_weights, cfg.model, ckpt_path);

    std::cout << json{{"checkpoint", ckpt_path},
                      {"log", log_path},
                      {"steps", result.total_steps},
                      {"best_epoch", result.best_epoch},
                      {"best_mean_f1", result.best_metric}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& refs, const std::vector<std::string>& ests) {
    if (refs.size() != ests.size()) {
        throw std::runtime_error("eval: --ref and --est counts differ");
    }
    std::vector<metrics::RecordingPair> pairs;
    for (size_t i = 0; i < refs.size(); ++i) {
        pairs.push_back({io::read_notes(ests[i]), io::read_notes(refs[i])});
    }
    const auto report = metrics::evaluate_recordings(pairs);
    json j{{"mean", scores_json(report.mean)}, {"recordings", json::array()}};
    for (const auto& rec : report.per_recording) j["recordings"].push_back(scores_json(rec));
    std::cout << j.dump(2) << "\n";
    print_score_table(report, std::cerr);
    return 0;
}

int cmd_diagnose(const std::string& checkpoint, int clips, double seconds, uint64_t seed,
                 const std::string& output) {
    auto [weights, cfg] = load_checkpoint(checkpoint);
    Model<float> model(cfg, std::move(weights));
    dsp::MelConfig mel;
    mel.n_mels = static_cast<int>(cfg.mel_bins);

    SynthOptions synth;
    // keep the synthetic register inside the model's pitch grid
    synth.pitch_max = std::min<int>(synth.pitch_max,
                                    kPitchMin + static_cast<int>(cfg.pitches) - 1);
    const auto clips_data = make_synthetic_dataset(seed, clips, seconds, synth);
    std::vector<LabeledFeatures> dataset;
    for (const auto& clip : clips_data) {
        LabeledFeatures item;
        item.features = dsp::log_mel(clip.audio, mel);
        item.targets = notes_to_targets(clip.notes, item.features.frames, cfg.pitches,
                                        mel.hop_seconds());
        dataset.push_back(std::move(item));
    }
    const auto profile = position_error_profile(make_model_predictor(model), dataset,
                                                cfg.chunk_frames, cfg.margin);

    std::ostringstream csv;
    csv << "# mean squared error by within-chunk position; velocity compared as argmax class / 127\n";
    csv << "position,frame,onset,offset,velocity\n";
    for (int64_t n = 0; n < profile.chunk_frames; ++n) {
        csv << n << "," << profile.frame[n] << "," << profile.onset[n] << ","
            << profile.offset[n] << "," << profile.velocity[n] << "\n";
    }
    if (output.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream f(output);
        if (!f) throw std::runtime_error("cannot write " + output);
        f << csv.str();
        std::cout << json{{"output", output}, {"positions", profile.chunk_frames}}.dump() << "\n";
    }
    return 0;
}

int cmd_features(const std::string& input, const std::string& output, int mels) {
    dsp::MelConfig mel;
    mel.n_mels = mels;
    const auto wave = io::read_wav(input);
    const auto resampled = dsp::resample(wave, mel.sample_rate);
    const auto features = dsp::log_mel(resampled, mel);
    io::write_features(features, output);
    std::cout << json{{"frames", features.frames}, {"bins", features.bins}, {"output", output}}
                     .dump()
              << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"hierarchical frequency-time transformer piano transcription"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand
    int threads = 0;

    app.add_option("--threads", threads, "worker thread cap (0 = all cores)");

    auto* transcribe = app.add_subcommand("transcribe", "audio file -> note events");
    std::string t_input, t_ckpt, t_output, t_stride = "half";
    transcribe->add_option("--input", t_input, "input WAV")->required();
    transcribe->add_option("--checkpoint", t_ckpt, "model checkpoint")->required();
    transcribe->add_option("--output", t_output, "output notes (.json, .mid)")->required();
    transcribe->add_option("--stride", t_stride, "full|half")
        ->check(CLI::IsMember({"full", "half"}));

    auto* train = app.add_subcommand("train", "train on synthetic clips");
    std::string tr_config, tr_output = "train_out";
    int64_t tr_seed = -1;
    train->add_option("--config", tr_config, "JSON config")->required();
    train->add_option("--output", tr_output, "output directory");
    train->add_option("--seed", tr_seed, "seed override");

    auto* eval = app.add_subcommand("eval", "score estimated notes against a reference");
    std::vector<std::string> e_refs, e_ests;
    eval->add_option("--ref", e_refs, "reference notes (JSON or MIDI)")->required();
    eval->add_option("--est", e_ests, "estimated notes (JSON or MIDI)")->required();

    auto* diagnose = app.add_subcommand("diagnose", "within-chunk position error profile (CSV)");
    std::string d_ckpt, d_output;
    int d_clips = 4;
    double d_seconds = 10.0;
    uint64_t d_seed = 1;
    diagnose->add_option("--checkpoint", d_ckpt, "model checkpoint")->required();
    diagnose->add_option("--clips", d_clips, "synthetic clips to profile");
    diagnose->add_option("--seconds", d_seconds, "clip length");
    diagnose->add_option("--seed", d_seed, "dataset seed");
    diagnose->add_option("--output", d_output, "CSV path (stdout when omitted)");

    auto* features = app.add_subcommand("features", "dump the log-mel matrix");
    std::string f_input, f_output;
    int f_mels = 256;
    features->add_option("--input", f_input, "input WAV")->required();
    features->add_option("--output", f_output, "output file")->required();
    features->add_option("--mels", f_mels, "mel bins");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (threads > 0) set_threads(threads);
    try {
        if (*transcribe) return cmd_transcribe(t_input, t_ckpt, t_stride, t_output);
        if (*train) return cmd_train(tr_config, tr_output, tr_seed);
        if (*eval) return cmd_eval(e_refs, e_ests);
        if (*diagnose) return cmd_diagnose(d_ckpt, d_clips, d_seconds, d_seed, d_output);
        if (*features) return cmd_features(f_input, f_output, f_mels);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

}  // namespace hft::cli
