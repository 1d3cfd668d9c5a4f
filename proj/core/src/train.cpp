#include "hft/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

#include "hft/decoder.hpp"
#include "hft/inference.hpp"
#include "hft/loss.hpp"

namespace hft {

void TrainConfig::validate() const {
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("train config: lr must be > 0");
    if (clip_norm <= 0.0) throw std::invalid_argument("train config: clip_norm must be > 0");
    if (dropout < 0.0 || dropout >= 1.0) {
        throw std::invalid_argument("train config: dropout must be in [0, 1)");
    }
    if (loss_weight_first < 0.0 || loss_weight_second < 0.0) {
        throw std::invalid_argument("train config: loss weights must be >= 0");
    }
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("train config: eval_every must be >= 1");
}

std::string EpochLog::to_json() const {
    nlohmann::json j{{"epoch", epoch},
                     {"steps", steps},
                     {"lr", lr},
                     {"loss", loss},
                     {"loss_first", loss_first},
                     {"loss_second", loss_second}};
    if (validated) {
        j["val"] = {{"frame_f1", val.frame.f1},
                    {"note_f1", val.note.f1},
                    {"note_offset_f1", val.note_offset.f1},
                    {"note_offset_velocity_f1", val.note_offset_velocity.f1},
                    {"mean_f1", val_mean_f1}};
    }
    // wall time stays out of the line so identical runs log identical bytes
    return j.dump();
}

template <class S>
Weights<S> clone_weights(const Weights<S>& w) {
    Weights<S> out;
    for (const auto& name : w.order) {
        const auto& t = w.at(name);
        std::vector<S> values(t.values().begin(), t.values().end());
        out.insert(name, nn::Tensor<S>::from(t.shape(), std::move(values),
                                             /*requires_grad=*/true));
    }
    return out;
}

namespace {

struct TrainChunk {
    dsp::Chunk chunk;
    TargetGrids targets;
};

struct PreparedClip {
    dsp::FramedInput framed;
    const std::vector<NoteEvent>* notes;
};

double mean_f1(const metrics::RecordingScores& s) {
    return 0.25 * (s.frame.f1 + s.note.f1 + s.note_offset.f1 + s.note_offset_velocity.f1);
}

}  // namespace

FitResult fit(Model<float>& model, const std::vector<LabeledClip>& train,
              const std::vector<LabeledClip>& val, const TrainConfig& cfg,
              const dsp::MelConfig& mel, std::ostream* log_stream) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("fit: empty dataset");
    const ModelConfig& mc = model.config();
    if (mel.n_mels != mc.mel_bins) {
        throw std::invalid_argument("fit: mel bins do not match the model config");
    }
    model.set_dropout(cfg.dropout);

    // features, margins and target slices, computed once
    std::vector<TrainChunk> items;
    for (const auto& clip : train) {
        const auto features = dsp::log_mel(clip.audio, mel);
        const auto framed = dsp::frame_with_margins(features, mc.margin);
        const auto targets = notes_to_targets(clip.notes, framed.frames, mc.pitches,
                                              mel.hop_seconds());
        for (auto& chunk : dsp::make_chunks(framed, mc.chunk_frames)) {
            TargetGrids slice = targets.slice_frames(chunk.start_frame, mc.chunk_frames);
            items.push_back({std::move(chunk), std::move(slice)});
        }
    }

    const std::vector<LabeledClip>& val_clips = val.empty() ? train : val;
    std::vector<PreparedClip> prepared_val;
    for (const auto& clip : val_clips) {
        const auto features = dsp::log_mel(clip.audio, mel);
        prepared_val.push_back({dsp::frame_with_margins(features, mc.margin), &clip.notes});
    }

    Rng shuffle_rng(cfg.seed);
    Rng dropout_rng(cfg.seed + 0x9E3779B97F4A7C15ull);
    AdamState<float> adam;
    AdamParams adam_params{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
    PlateauScheduler scheduler(cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
                               cfg.plateau_threshold);

    FitResult result;
    std::vector<size_t> order(items.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t_start = std::chrono::steady_clock::now();
    bool stop = false;
    for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
        // Fisher-Yates with the deterministic stream
        for (size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }

        double loss_sum = 0.0, first_sum = 0.0, second_sum = 0.0;
        int64_t chunk_count = 0;
        for (size_t pos = 0; pos < order.size() && !stop; pos += cfg.batch) {
            const size_t batch_end = std::min(order.size(), pos + cfg.batch);
            const float inv_batch = 1.0f / static_cast<float>(batch_end - pos);
            nn::Tensor<float> batch_loss;
            for (size_t bi = pos; bi < batch_end; ++bi) {
                const TrainChunk& item = items[order[bi]];
                ForwardOptions<float> opts;
                opts.train = true;
                opts.rng = &dropout_rng;
                const auto out = model.forward(chunk_tensor<float>(item.chunk), opts);
                auto bd = total_loss(out, item.targets,
                                     static_cast<float>(cfg.loss_weight_first),
                                     static_cast<float>(cfg.loss_weight_second));
                loss_sum += bd.combined;
                first_sum += bd.first;
                second_sum += bd.second;
                ++chunk_count;
                batch_loss = batch_loss.defined() ? nn::add(batch_loss, bd.loss) : bd.loss;
            }
            nn::backward(nn::scale(batch_loss, inv_batch));
            clip_grad_norm(model.weights(), cfg.clip_norm);
            adam_params.lr = scheduler.lr();
            adam_step(model.weights(), adam, adam_params);
            ++result.total_steps;
            if (cfg.max_steps > 0 && result.total_steps >= cfg.max_steps) stop = true;
        }

        EpochLog log;
        log.epoch = epoch;
        log.steps = result.total_steps;
        log.lr = scheduler.lr();
        log.loss = chunk_count > 0 ? loss_sum / chunk_count : 0.0;
        log.loss_first = chunk_count > 0 ? first_sum / chunk_count : 0.0;
        log.loss_second = chunk_count > 0 ? second_sum / chunk_count : 0.0;

        const bool last = stop || epoch == cfg.epochs;
        if (epoch % cfg.eval_every == 0 || last) {
            const auto predictor = make_model_predictor(model);
            std::vector<metrics::RecordingPair> pairs;
            DecodeOptions decode_opts;
            decode_opts.hop_seconds = mel.hop_seconds();
            for (const auto& pv : prepared_val) {
                const auto grids = infer_full_stride(predictor, pv.framed, mc.chunk_frames);
                pairs.push_back({decode_notes(grids, decode_opts), *pv.notes});
            }
            const auto report = metrics::evaluate_recordings(pairs, mel.hop_seconds(),
                                                             mc.pitches);
            log.validated = true;
            log.val = report.mean;
            log.val_mean_f1 = mean_f1(report.mean);
            scheduler.observe(log.val_mean_f1);
            if (log.val_mean_f1 > result.best_metric) {
                result.best_metric = log.val_mean_f1;
                result.best_epoch = epoch;
                result.best_weights = clone_weights(model.weights());
            }
            if (cfg.stop_at_note_f1 > 0.0 && report.mean.note.f1 >= cfg.stop_at_note_f1) {
                result.reached_stop_f1 = true;
                stop = true;
            }
        }
        log.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        if (log_stream != nullptr) *log_stream << log.to_json() << "\n";
        log_info("epoch " + std::to_string(epoch) + " loss " + std::to_string(log.loss) +
                 (log.validated ? " val_mean_f1 " + std::to_string(log.val_mean_f1) : ""));
        result.log.push_back(log);
    }

    if (result.best_epoch < 0) {  // no validation ran (should not happen)
        result.best_weights = clone_weights(model.weights());
    }
    return result;
}

template Weights<float> clone_weights<float>(const Weights<float>&);
template Weights<double> clone_weights<double>(const Weights<double>&);

}  // namespace hft
