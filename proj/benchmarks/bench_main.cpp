#include <benchmark/benchmark.h>

#include "hft/decoder.hpp"
#include "hft/dsp.hpp"
#include "hft/loss.hpp"
#include "hft/model.hpp"
#include "hft/synth.hpp"

using namespace hft;

namespace {

void BM_matmul(benchmark::State& state) {
    const int64_t n = state.range(0);
    Rng rng(1);
    std::vector<float> av(n * n), bv(n * n);
    for (auto& v : av) v = static_cast<float>(rng.normal());
    for (auto& v : bv) v = static_cast<float>(rng.normal());
    const auto a = nn::Tensor<float>::from({n, n}, std::move(av));
    const auto b = nn::Tensor<float>::from({n, n}, std::move(bv));
    for (auto _ : state) {
        auto c = nn::matmul(a, b);
        benchmark::DoNotOptimize(c.values().data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

void BM_log_mel(benchmark::State& state) {
    dsp::Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(16000 * state.range(0));
    Rng rng(2);
    for (auto& s : w.samples) s = static_cast<float>(rng.normal(0.0, 0.1));
    for (auto _ : state) {
        auto s = dsp::log_mel(w);
        benchmark::DoNotOptimize(s.data.data());
    }
}
BENCHMARK(BM_log_mel)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

ModelConfig bench_config(int64_t scale) {
    ModelConfig cfg;
    cfg.chunk_frames = 8 * scale;
    cfg.margin = 4;
    cfg.mel_bins = 16 * scale;
    cfg.pitches = 22 * scale;
    cfg.embed_dim = 16;
    cfg.ff_dim = 32;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.dropout = 0.0;
    return cfg;
}

void BM_forward(benchmark::State& state) {
    const auto cfg = bench_config(state.range(0));
    const auto model = Model<float>::randomly_initialized(cfg, 3);
    Rng rng(4);
    std::vector<float> v(cfg.chunk_frames * cfg.mel_bins * cfg.window());
    for (auto& x : v) x = static_cast<float>(rng.normal(-4.0, 2.0));
    const auto chunk =
        nn::Tensor<float>::from({cfg.chunk_frames, cfg.mel_bins, cfg.window()}, std::move(v));
    for (auto _ : state) {
        auto out = model.forward(chunk);
        benchmark::DoNotOptimize(out.output_2nd->frame.values().data());
    }
}
BENCHMARK(BM_forward)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_forward_backward(benchmark::State& state) {
    const auto cfg = bench_config(state.range(0));
    auto model = Model<float>::randomly_initialized(cfg, 3);
    Rng rng(4);
    std::vector<float> v(cfg.chunk_frames * cfg.mel_bins * cfg.window());
    for (auto& x : v) x = static_cast<float>(rng.normal(-4.0, 2.0));
    const auto chunk =
        nn::Tensor<float>::from({cfg.chunk_frames, cfg.mel_bins, cfg.window()}, std::move(v));
    TargetGrids targets;
    targets.frames = cfg.chunk_frames;
    targets.pitches = cfg.pitches;
    targets.frame.assign(targets.frames * targets.pitches, 0.0f);
    targets.onset.assign(targets.frames * targets.pitches, 0.0f);
    targets.offset.assign(targets.frames * targets.pitches, 0.0f);
    targets.velocity.assign(targets.frames * targets.pitches, 0);
    for (auto _ : state) {
        auto bd = total_loss(model.forward(chunk), targets, 1.0f, 1.0f);
        nn::backward(bd.loss);
        benchmark::DoNotOptimize(bd.combined);
        for (const auto& name : model.weights().order) model.weights().at(name).zero_grad();
    }
}
BENCHMARK(BM_forward_backward)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_decode(benchmark::State& state) {
    Rng rng(5);
    GridRoll g;
    g.frames = state.range(0);
    g.pitches = 88;
    g.frame.resize(g.frames * g.pitches);
    g.onset.resize(g.frames * g.pitches);
    g.offset.resize(g.frames * g.pitches);
    g.velocity.resize(g.frames * g.pitches);
    for (auto& v : g.frame) v = static_cast<float>(rng.uniform());
    for (auto& v : g.onset) v = static_cast<float>(rng.uniform());
    for (auto& v : g.offset) v = static_cast<float>(rng.uniform());
    for (auto& v : g.velocity) v = static_cast<uint8_t>(rng.uniform_index(128));
    for (auto _ : state) {
        auto notes = decode_notes(g);
        benchmark::DoNotOptimize(notes.data());
    }
}
BENCHMARK(BM_decode)->Arg(500)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_synthesize(benchmark::State& state) {
    for (auto _ : state) {
        auto clips = make_synthetic_dataset(1, 1, 10.0);
        benchmark::DoNotOptimize(clips.data());
    }
}
BENCHMARK(BM_synthesize)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
