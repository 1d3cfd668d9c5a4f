#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hft/model.hpp"

namespace hft {

struct AdamParams {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class S>
struct AdamState {
    int64_t step = 0;
    std::unordered_map<std::string, std::vector<S>> m, v;
};

/// One bias-corrected Adam update from the gradients accumulated on the
/// weights; clears the gradients afterwards. A non-finite gradient aborts
/// with the offending tensor's name.
template <class S>
void adam_step(Weights<S>& w, AdamState<S>& state, const AdamParams& params);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm. Zero gradients pass through untouched.
template <class S>
double clip_grad_norm(Weights<S>& w, double max_norm);

/// Reduce-on-plateau for a higher-is-better validation metric: after
/// `patience` consecutive observations without an improvement beyond
/// `threshold` (relative), the rate drops by `factor`.
class PlateauScheduler {
public:
    PlateauScheduler(double lr, double factor = 0.1, int patience = 10,
                     double threshold = 1e-4, double min_lr = 0.0)
        : lr_(lr), factor_(factor), patience_(patience), threshold_(threshold), min_lr_(min_lr) {}

    /// Feeds one validation metric; returns the (possibly reduced) rate.
    double observe(double metric);

    double lr() const { return lr_; }
    int bad_count() const { return bad_count_; }

private:
    double lr_;
    double factor_;
    int patience_;
    double threshold_;
    double min_lr_;
    double best_ = -1e300;
    bool has_best_ = false;
    int bad_count_ = 0;
};

}  // namespace hft
