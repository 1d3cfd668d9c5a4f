#include "hft/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hft {

template <class S>
void adam_step(Weights<S>& w, AdamState<S>& state, const AdamParams& params) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(params.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(params.beta2, static_cast<double>(state.step));
    for (const auto& name : w.order) {
        auto& t = w.at(name);
        auto g = t.grad();
        if (g.empty()) continue;  // parameter untouched by this loss
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(t.size(), S(0));
        if (v.empty()) v.assign(t.size(), S(0));
        S* value = t.mut_values().data();
        for (int64_t i = 0; i < t.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            if (!std::isfinite(gi)) {
                throw std::runtime_error("adam_step: non-finite gradient in tensor '" + name +
                                         "' at index " + std::to_string(i));
            }
            const double mi = params.beta1 * m[i] + (1.0 - params.beta1) * gi;
            const double vi = params.beta2 * v[i] + (1.0 - params.beta2) * gi * gi;
            m[i] = static_cast<S>(mi);
            v[i] = static_cast<S>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            value[i] -= static_cast<S>(params.lr * m_hat / (std::sqrt(v_hat) + params.eps));
        }
        t.zero_grad();
    }
}

template <class S>
double clip_grad_norm(Weights<S>& w, double max_norm) {
    if (max_norm <= 0.0) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
    double sq = 0.0;
    for (const auto& name : w.order) {
        for (const S g : w.at(name).grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const S scale = static_cast<S>(max_norm / norm);
        for (const auto& name : w.order) {
            for (S& g : w.at(name).mut_grad()) g *= scale;
        }
    }
    return norm;
}

double PlateauScheduler::observe(double metric) {
    const bool improved =
        !has_best_ || metric > best_ + threshold_ * std::max(std::abs(best_), 1e-12);
    if (improved) {
        best_ = metric;
        has_best_ = true;
        bad_count_ = 0;
    } else {
        ++bad_count_;
        if (bad_count_ >= patience_) {
            lr_ = std::max(min_lr_, lr_ * factor_);
            bad_count_ = 0;
        }
    }
    return lr_;
}

template void adam_step<float>(Weights<float>&, AdamState<float>&, const AdamParams&);
template void adam_step<double>(Weights<double>&, AdamState<double>&, const AdamParams&);
template double clip_grad_norm<float>(Weights<float>&, double);
template double clip_grad_norm<double>(Weights<double>&, double);

}  // namespace hft
