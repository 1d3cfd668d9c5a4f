#include "hft/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>
#include <string>

#include "hft/common.hpp"

namespace hft::dsp {

std::atomic<uint64_t> log_mel_invocations{0};

namespace {

constexpr int kSincZeroCrossings = 64;
constexpr double kKaiserBeta = 14.7697;
constexpr double kRolloff = 0.945;

double bessel_i0(double x) {
    // power series; converges quickly for the beta values used here
    double sum = 1.0, term = 1.0;
    const double half = 0.5 * x;
    for (int k = 1; k < 64; ++k) {
        term *= (half / k) * (half / k);
        sum += term;
        if (term < sum * 1e-14) break;
    }
    return sum;
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = M_PI * x;
    return std::sin(px) / px;
}

/// Windowed-sinc interpolation kernel; x in input samples, support |x| <= hw.
double sinc_kernel(double x, double cutoff, double hw, double inv_i0_beta) {
    if (std::abs(x) >= hw) return 0.0;
    const double r = x / hw;
    const double window = bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) * inv_i0_beta;
    return cutoff * sinc(cutoff * x) * window;
}

void fft(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

struct MelBand {
    int start = 0;
    std::vector<double> weights;
};

/// Triangular filters on the HTK mel scale, no area normalization.
std::vector<MelBand> build_mel_bank(const MelConfig& cfg) {
    const int n_freqs = cfg.n_freq_bins();
    const double bin_hz = (cfg.sample_rate / 2.0) / (n_freqs - 1);
    const double m_lo = hz_to_mel(cfg.f_min);
    const double m_hi = hz_to_mel(cfg.f_max);
    std::vector<double> f_pts(cfg.n_mels + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i) {
        f_pts[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (cfg.n_mels + 1));
    }
    std::vector<MelBand> bank(cfg.n_mels);
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double f0 = f_pts[m], f1 = f_pts[m + 1], f2 = f_pts[m + 2];
        const int lo = std::max(0, static_cast<int>(std::ceil(f0 / bin_hz)));
        const int hi = std::min(n_freqs - 1, static_cast<int>(std::floor(f2 / bin_hz)));
        MelBand band;
        band.start = lo;
        for (int k = lo; k <= hi; ++k) {
            const double f = k * bin_hz;
            const double up = f1 > f0 ? (f - f0) / (f1 - f0) : 0.0;
            const double down = f2 > f1 ? (f2 - f) / (f2 - f1) : 0.0;
            band.weights.push_back(std::max(0.0, std::min(up, down)));
        }
        bank[m] = std::move(band);
    }
    return bank;
}

}  // namespace

Waveform downmix(std::span<const float> interleaved, int channels, int sample_rate) {
    if (channels < 1) throw std::invalid_argument("downmix: channel count must be positive");
    Waveform out;
    out.sample_rate = sample_rate;
    const size_t frames = interleaved.size() / channels;
    out.samples.resize(frames);
    const float inv = 1.0f / static_cast<float>(channels);
    for (size_t i = 0; i < frames; ++i) {
        float acc = 0.0f;
        for (int c = 0; c < channels; ++c) acc += interleaved[i * channels + c];
        out.samples[i] = acc * inv;
    }
    return out;
}

Waveform resample(const Waveform& w, int target_rate) {
    if (w.sample_rate <= 0 || target_rate <= 0) {
        throw std::invalid_argument("resample: sample rates must be positive");
    }
    if (w.samples.empty()) throw std::invalid_argument("resample: empty waveform");
    if (w.sample_rate == target_rate) return w;

    const int64_t g = std::gcd(w.sample_rate, target_rate);
    const int64_t up = target_rate / g;    // phases
    const int64_t down = w.sample_rate / g;

    const double ratio = static_cast<double>(target_rate) / w.sample_rate;
    const double cutoff = kRolloff * std::min(1.0, ratio);
    const double hw = kSincZeroCrossings / cutoff;  // half width, input samples
    const int m_lo = -static_cast<int>(std::ceil(hw));
    const int m_hi = static_cast<int>(std::ceil(hw));
    const double inv_i0_beta = 1.0 / bessel_i0(kKaiserBeta);

    // One tap table per phase, normalized to unit sum so DC is preserved.
    const int64_t taps = m_hi - m_lo + 1;
    std::vector<double> table(up * taps);
    for (int64_t p = 0; p < up; ++p) {
        const double frac = static_cast<double>((p * down) % up) / up;
        double sum = 0.0;
        double* row = table.data() + p * taps;
        for (int64_t t = 0; t < taps; ++t) {
            row[t] = sinc_kernel((m_lo + t) - frac, cutoff, hw, inv_i0_beta);
            sum += row[t];
        }
        if (sum != 0.0) {
            for (int64_t t = 0; t < taps; ++t) row[t] /= sum;
        }
    }

    const int64_t n_in = static_cast<int64_t>(w.samples.size());
    const int64_t n_out = (n_in * up + down - 1) / down;
    Waveform out;
    out.sample_rate = target_rate;
    out.samples.resize(n_out);
    const float* x = w.samples.data();
    float* y = out.samples.data();
    parallel_for(n_out, [&](int64_t j0, int64_t j1) {
        for (int64_t j = j0; j < j1; ++j) {
            const int64_t num = j * down;
            const int64_t base = num / up;
            const int64_t p = j % up;
            const double* row = table.data() + p * taps;
            double acc = 0.0;
            const int64_t k_lo = std::max<int64_t>(base + m_lo, 0);
            const int64_t k_hi = std::min<int64_t>(base + m_hi, n_in - 1);
            for (int64_t k = k_lo; k <= k_hi; ++k) {
                acc += row[k - base - m_lo] * x[k];
            }
            y[j] = static_cast<float>(acc);
        }
    });
    return out;
}

LogMelSpectrogram log_mel(const Waveform& w, const MelConfig& cfg) {
    log_mel_invocations.fetch_add(1, std::memory_order_relaxed);
    if (w.sample_rate != cfg.sample_rate) {
        throw std::invalid_argument("log_mel: expected " + std::to_string(cfg.sample_rate) +
                                    " Hz input, got " + std::to_string(w.sample_rate));
    }
    if (w.samples.empty()) throw std::invalid_argument("log_mel: empty waveform");
    if ((cfg.n_fft & (cfg.n_fft - 1)) != 0 || cfg.n_fft < 2) {
        throw std::invalid_argument("log_mel: n_fft must be a power of two");
    }
    if (cfg.win_length > cfg.n_fft) {
        throw std::invalid_argument("log_mel: win_length exceeds n_fft");
    }

    // periodic Hann, centered in the fft buffer when shorter
    std::vector<double> window(cfg.n_fft, 0.0);
    const int w_off = (cfg.n_fft - cfg.win_length) / 2;
    for (int i = 0; i < cfg.win_length; ++i) {
        window[w_off + i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / cfg.win_length));
    }

    const auto bank = build_mel_bank(cfg);
    const int64_t n = static_cast<int64_t>(w.samples.size());
    const int64_t T = n / cfg.hop + 1;
    const int64_t pad = cfg.n_fft / 2;  // centered frames, constant (zero) padding
    const int n_bins = cfg.n_freq_bins();

    LogMelSpectrogram out;
    out.frames = T;
    out.bins = cfg.n_mels;
    out.hop_seconds = cfg.hop_seconds();
    out.pad_value = static_cast<float>(std::log(static_cast<double>(cfg.log_floor)));
    out.data.resize(T * cfg.n_mels);

    const float* x = w.samples.data();
    parallel_for(T, [&](int64_t t0, int64_t t1) {
        std::vector<std::complex<double>> buf(cfg.n_fft);
        std::vector<double> power(n_bins);
        for (int64_t t = t0; t < t1; ++t) {
            const int64_t start = t * cfg.hop - pad;
            for (int i = 0; i < cfg.n_fft; ++i) {
                const int64_t k = start + i;
                const double s = (k >= 0 && k < n) ? static_cast<double>(x[k]) : 0.0;
                buf[i] = {s * window[i], 0.0};
            }
            fft(buf);
            for (int b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
            float* row = out.data.data() + t * cfg.n_mels;
            for (int m = 0; m < cfg.n_mels; ++m) {
                const MelBand& band = bank[m];
                double acc = 0.0;
                for (size_t i = 0; i < band.weights.size(); ++i) {
                    acc += band.weights[i] * power[band.start + i];
                }
                row[m] = static_cast<float>(
                    std::log(std::max(acc, static_cast<double>(cfg.log_floor))));
            }
        }
    });
    return out;
}

FramedInput frame_with_margins(const LogMelSpectrogram& s, int64_t margin) {
    if (margin < 0) throw std::invalid_argument("frame_with_margins: margin must be >= 0");
    FramedInput fi;
    fi.frames = s.frames;
    fi.bins = s.bins;
    fi.margin = margin;
    fi.window = 2 * margin + 1;
    fi.data.resize(fi.frames * fi.bins * fi.window);
    const float pad = s.pad_value;
    parallel_for(fi.frames, [&](int64_t t0, int64_t t1) {
        for (int64_t t = t0; t < t1; ++t) {
            for (int64_t f = 0; f < fi.bins; ++f) {
                float* dst = fi.data.data() + (t * fi.bins + f) * fi.window;
                for (int64_t m = -margin; m <= margin; ++m) {
                    const int64_t src = t + m;
                    dst[m + margin] =
                        (src >= 0 && src < s.frames) ? s.at(src, f) : pad;
                }
            }
        }
    });
    return fi;
}

Chunk chunk_at(const FramedInput& fi, int64_t start, int64_t chunk_frames) {
    if (chunk_frames < 1) throw std::invalid_argument("chunk_at: chunk_frames must be >= 1");
    if (start < 0 || start >= fi.frames) {
        throw std::invalid_argument("chunk_at: start " + std::to_string(start) +
                                    " outside [0, " + std::to_string(fi.frames) + ")");
    }
    Chunk c;
    c.frames = chunk_frames;
    c.bins = fi.bins;
    c.window = fi.window;
    c.start_frame = start;
    c.valid_frames = std::min(chunk_frames, fi.frames - start);
    c.data.assign(chunk_frames * fi.bins * fi.window, 0.0f);
    const int64_t row = fi.bins * fi.window;
    std::copy_n(fi.data.data() + start * row, c.valid_frames * row, c.data.data());
    return c;
}

std::vector<Chunk> make_chunks(const FramedInput& fi, int64_t chunk_frames) {
    if (chunk_frames < 1) throw std::invalid_argument("make_chunks: chunk_frames must be >= 1");
    const int64_t count = std::max<int64_t>(1, (fi.frames + chunk_frames - 1) / chunk_frames);
    std::vector<Chunk> chunks;
    chunks.reserve(count);
    for (int64_t i = 0; i < count; ++i) {
        chunks.push_back(chunk_at(fi, i * chunk_frames, chunk_frames));
    }
    return chunks;
}

}  // namespace hft::dsp
