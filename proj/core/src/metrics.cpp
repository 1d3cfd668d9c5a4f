#include "hft/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace hft::metrics {

PRF prf_from_counts(int64_t matched, int64_t n_est, int64_t n_ref) {
    PRF s;
    s.precision = n_est > 0 ? static_cast<double>(matched) / n_est : 0.0;
    s.recall = n_ref > 0 ? static_cast<double>(matched) / n_ref : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
}

namespace {

bool onset_pitch_admissible(const NoteEvent& e, const NoteEvent& r, const NoteTolerances& tol) {
    return e.pitch == r.pitch && std::abs(e.onset_s - r.onset_s) <= tol.onset_s;
}

bool offset_admissible(const NoteEvent& e, const NoteEvent& r, const NoteTolerances& tol) {
    const double allowed = std::max(tol.offset_min_s, tol.offset_ratio * (r.offset_s - r.onset_s));
    return std::abs(e.offset_s - r.offset_s) <= allowed;
}

/// Kuhn's augmenting-path maximum bipartite matching.
struct Matcher {
    const std::vector<std::vector<int>>& adj;  // est -> admissible refs
    std::vector<int> ref_match;                // ref -> est or -1
    std::vector<char> used;

    explicit Matcher(const std::vector<std::vector<int>>& a, size_t n_ref)
        : adj(a), ref_match(n_ref, -1) {}

    bool try_assign(int e) {
        for (const int r : adj[e]) {
            if (used[r]) continue;
            used[r] = 1;
            if (ref_match[r] < 0 || try_assign(ref_match[r])) {
                ref_match[r] = e;
                return true;
            }
        }
        return false;
    }
};

}  // namespace

std::vector<std::pair<int, int>> match_notes(std::span<const NoteEvent> est,
                                             std::span<const NoteEvent> ref, NoteMatchMode mode,
                                             const NoteTolerances& tol) {
    // velocity mode: normalize reference velocities by their max and fit a
    // single nonnegative scale over pitch/onset-admissible pairs
    double vel_scale = 1.0;
    double ref_vel_norm = 1.0;
    if (mode == NoteMatchMode::onset_offset_velocity) {
        int max_ref_vel = 0;
        for (const auto& r : ref) max_ref_vel = std::max(max_ref_vel, r.velocity);
        if (max_ref_vel > 0) ref_vel_norm = static_cast<double>(max_ref_vel);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < est.size(); ++i) {
            for (size_t j = 0; j < ref.size(); ++j) {
                if (!onset_pitch_admissible(est[i], ref[j], tol)) continue;
                const double ev = est[i].velocity;
                const double rv = ref[j].velocity / ref_vel_norm;
                num += ev * rv;
                den += ev * ev;
            }
        }
        if (den > 0.0) vel_scale = num / den;
    }

    std::vector<std::vector<int>> adj(est.size());
    for (size_t i = 0; i < est.size(); ++i) {
        for (size_t j = 0; j < ref.size(); ++j) {
            if (!onset_pitch_admissible(est[i], ref[j], tol)) continue;
            if (mode != NoteMatchMode::onset && !offset_admissible(est[i], ref[j], tol)) continue;
            if (mode == NoteMatchMode::onset_offset_velocity) {
                const double scaled = vel_scale * est[i].velocity;
                const double rv = ref[j].velocity / ref_vel_norm;
                if (std::abs(scaled - rv) > tol.velocity) continue;
            }
            adj[i].push_back(static_cast<int>(j));
        }
    }

    Matcher matcher(adj, ref.size());
    for (size_t i = 0; i < est.size(); ++i) {
        matcher.used.assign(ref.size(), 0);
        matcher.try_assign(static_cast<int>(i));
    }
    std::vector<std::pair<int, int>> pairs;
    for (size_t j = 0; j < ref.size(); ++j) {
        if (matcher.ref_match[j] >= 0) {
            pairs.emplace_back(matcher.ref_match[j], static_cast<int>(j));
        }
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

PRF note_prf(std::span<const NoteEvent> est, std::span<const NoteEvent> ref, NoteMatchMode mode,
             const NoteTolerances& tol) {
    const auto pairs = match_notes(est, ref, mode, tol);
    return prf_from_counts(static_cast<int64_t>(pairs.size()), est.size(), ref.size());
}

BinaryRoll frame_roll(std::span<const NoteEvent> notes, int64_t frames, int64_t pitches,
                      double hop_s) {
    BinaryRoll roll;
    roll.frames = frames;
    roll.pitches = pitches;
    roll.active.assign(frames * pitches, 0);
    for (const auto& n : notes) {
        const int64_t p = n.pitch - kPitchMin;
        if (p < 0 || p >= pitches) continue;
        for (int64_t t = 0; t < frames; ++t) {
            const double ts = t * hop_s;
            if (ts >= n.onset_s && ts < n.offset_s) roll.active[t * pitches + p] = 1;
        }
    }
    return roll;
}

PRF frame_prf(const BinaryRoll& est, const BinaryRoll& ref) {
    if (est.frames != ref.frames || est.pitches != ref.pitches) {
        throw std::invalid_argument("frame_prf: grid shapes differ");
    }
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < est.active.size(); ++i) {
        const bool e = est.active[i] != 0, r = ref.active[i] != 0;
        tp += e && r;
        fp += e && !r;
        fn += !e && r;
    }
    return prf_from_counts(tp, tp + fp, tp + fn);
}

EvalReport evaluate_recordings(std::span<const RecordingPair> recordings, double hop_s,
                               int64_t pitches, const NoteTolerances& tol) {
    EvalReport report;
    double sums[12] = {};
    for (const auto& rec : recordings) {
        double last = 0.0;
        for (const auto& n : rec.est) last = std::max(last, n.offset_s);
        for (const auto& n : rec.ref) last = std::max(last, n.offset_s);
        const int64_t frames = static_cast<int64_t>(std::ceil(last / hop_s)) + 1;

        RecordingScores s;
        s.frame = frame_prf(frame_roll(rec.est, frames, pitches, hop_s),
                            frame_roll(rec.ref, frames, pitches, hop_s));
        s.note = note_prf(rec.est, rec.ref, NoteMatchMode::onset, tol);
        s.note_offset = note_prf(rec.est, rec.ref, NoteMatchMode::onset_offset, tol);
        s.note_offset_velocity =
            note_prf(rec.est, rec.ref, NoteMatchMode::onset_offset_velocity, tol);
        report.per_recording.push_back(s);

        const PRF* all[4] = {&s.frame, &s.note, &s.note_offset, &s.note_offset_velocity};
        for (int k = 0; k < 4; ++k) {
            sums[k * 3 + 0] += all[k]->precision;
            sums[k * 3 + 1] += all[k]->recall;
            sums[k * 3 + 2] += all[k]->f1;
        }
    }
    if (!report.per_recording.empty()) {
        const double inv = 1.0 / static_cast<double>(report.per_recording.size());
        PRF* means[4] = {&report.mean.frame, &report.mean.note, &report.mean.note_offset,
                         &report.mean.note_offset_velocity};
        for (int k = 0; k < 4; ++k) {
            means[k]->precision = sums[k * 3 + 0] * inv;
            means[k]->recall = sums[k * 3 + 1] * inv;
            means[k]->f1 = sums[k * 3 + 2] * inv;
        }
    }
    return report;
}

}  // namespace hft::metrics
