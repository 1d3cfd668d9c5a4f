#include <doctest.h>

#include <cmath>

#include "hft/loss.hpp"
#include "hft/optim.hpp"

using namespace hft;
using nn::Tensor;

namespace {

/// Independent scalar-loop BCE with the documented clamp.
double bce_oracle(std::span<const double> y, std::span<const double> p) {
    double acc = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double pc = std::min(1.0 - 1e-7, std::max(1e-7, p[i]));
        acc -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
    }
    return acc;
}

/// Independent scalar-loop categorical cross-entropy.
double cce_oracle(std::span<const uint8_t> ids, std::span<const double> logits, int64_t classes) {
    double acc = 0.0;
    for (size_t c = 0; c < ids.size(); ++c) {
        const double* row = logits.data() + c * classes;
        double mx = row[0];
        for (int64_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
        acc -= (row[ids[c]] - mx) - std::log(z);
    }
    return acc;
}

}  // namespace

TEST_SUITE_BEGIN("loss_optim");

TEST_CASE("single-cell BCE of a confident miss is ln 2") {
    const auto y = Tensor<double>::from({1}, {1.0});
    const auto p = Tensor<double>::from({1}, {0.5});
    CHECK(nn::bce_sum(y, p).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("BCE of a perfect prediction is near zero") {
    const double eps = 1e-6;
    const auto y = Tensor<double>::from({2}, {eps, 1.0 - eps});
    const auto p = Tensor<double>::from({2}, {eps, 1.0 - eps});
    CHECK(nn::bce_sum(y, p).item() < 1e-4);
}

TEST_CASE("BCE and CCE match their scalar-loop oracles on random grids") {
    Rng rng(29);
    for (int rep = 0; rep < 100; ++rep) {
        const int64_t n = 2 + static_cast<int64_t>(rng.uniform_index(4));
        const int64_t p = 2 + static_cast<int64_t>(rng.uniform_index(4));
        std::vector<double> y(n * p), post(n * p);
        for (auto& v : y) v = rng.uniform();
        for (auto& v : post) v = 0.01 + 0.98 * rng.uniform();
        const double impl =
            nn::bce_sum(Tensor<double>::from({n, p}, std::vector<double>(y)),
                        Tensor<double>::from({n, p}, std::vector<double>(post)))
                .item();
        CHECK(impl == doctest::Approx(bce_oracle(y, post)).epsilon(1e-5));

        const int64_t classes = 128;
        std::vector<double> logits(n * p * classes);
        for (auto& v : logits) v = rng.normal(0.0, 2.0);
        std::vector<uint8_t> ids(n * p);
        for (auto& c : ids) c = static_cast<uint8_t>(rng.uniform_index(classes));
        const double cce =
            nn::cce_sum(ids, Tensor<double>::from({n, p, classes}, std::vector<double>(logits)))
                .item();
        CHECK(cce == doctest::Approx(cce_oracle(ids, logits, classes)).epsilon(1e-5));
    }
}

TEST_CASE("uniform logits cost N*P*ln(classes)") {
    const int64_t n = 3, p = 4;
    const auto logits = Tensor<double>::zeros({n, p, 128});
    std::vector<uint8_t> ids(n * p, 17);
    CHECK(nn::cce_sum(ids, logits).item() ==
          doctest::Approx(n * p * std::log(128.0)).epsilon(1e-9));
}

TEST_CASE("logits favoring the true class cost almost nothing") {
    const int64_t cells = 4;
    auto loss_with_margin = [&](double margin) {
        std::vector<double> logits(cells * 128, 0.0);
        std::vector<uint8_t> ids(cells);
        for (int64_t c = 0; c < cells; ++c) {
            ids[c] = static_cast<uint8_t>(10 + c);
            logits[c * 128 + ids[c]] = margin;
        }
        return nn::cce_sum(ids, Tensor<double>::from({cells, 128}, std::move(logits))).item() /
               cells;
    };
    // per-cell loss is log(1 + 127 e^-margin)
    CHECK(loss_with_margin(20.0) == doctest::Approx(127.0 * std::exp(-20.0)).epsilon(1e-3));
    CHECK(loss_with_margin(25.0) < 1e-8);
}

namespace {

struct LossFixture {
    TargetGrids targets;
    ModelOutput<double> out;

    LossFixture() {
        Rng rng(31);
        const int64_t n = 4, p = 3;
        targets.frames = n;
        targets.pitches = p;
        targets.frame.resize(n * p);
        targets.onset.resize(n * p);
        targets.offset.resize(n * p);
        targets.velocity.resize(n * p);
        for (auto& v : targets.frame) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
        for (auto& v : targets.onset) v = static_cast<float>(rng.uniform());
        for (auto& v : targets.offset) v = static_cast<float>(rng.uniform());
        for (auto& v : targets.velocity) v = static_cast<uint8_t>(rng.uniform_index(128));
        out.output_1st = random_grid(n, p, rng);
        out.output_2nd = random_grid(n, p, rng);
    }

    static GridOutput<double> random_grid(int64_t n, int64_t p, Rng& rng) {
        auto posterior = [&] {
            std::vector<double> v(n * p);
            for (auto& x : v) x = 0.02 + 0.96 * rng.uniform();
            return Tensor<double>::from({n, p}, std::move(v));
        };
        GridOutput<double> g;
        g.frame = posterior();
        g.onset = posterior();
        g.offset = posterior();
        std::vector<double> logits(n * p * 128);
        for (auto& x : logits) x = rng.normal(0.0, 1.0);
        g.velocity_logits = Tensor<double>::from({n, p, 128}, std::move(logits));
        return g;
    }
};

}  // namespace

TEST_CASE("hierarchy loss is the exact sum of its four components") {
    const LossFixture fx;
    const auto& g = fx.out.output_1st;
    const double frame = nn::bce_sum(grid_tensor<double>(fx.targets.frame, 4, 3), g.frame).item();
    const double onset = nn::bce_sum(grid_tensor<double>(fx.targets.onset, 4, 3), g.onset).item();
    const double offset =
        nn::bce_sum(grid_tensor<double>(fx.targets.offset, 4, 3), g.offset).item();
    const double vel =
        nn::cce_sum(std::span<const uint8_t>(fx.targets.velocity), g.velocity_logits).item();
    const double total = hierarchy_loss(g, fx.targets).item();
    CHECK(total == ((frame + onset) + offset) + vel);  // same association order: exact
}

TEST_CASE("combined loss is linear in the hierarchy weights") {
    const LossFixture fx;
    const auto unit = total_loss<double>(fx.out, fx.targets, 1.0, 1.0);
    CHECK(unit.combined == unit.first + unit.second);

    const auto only_second = total_loss<double>(fx.out, fx.targets, 0.0, 2.0);
    CHECK(only_second.combined == 2.0 * only_second.second);

    const auto only_first = total_loss<double>(fx.out, fx.targets, 2.0, 0.0);
    CHECK(only_first.combined == 2.0 * only_first.first);

    // exact linearity on a grid of coefficients
    for (const double a : {0.2, 0.6, 1.0, 1.4, 1.8}) {
        for (const double b : {0.2, 1.0, 1.8}) {
            const auto bd = total_loss<double>(fx.out, fx.targets, a, b);
            CHECK(bd.combined == a * bd.first + b * bd.second);
        }
    }
}

TEST_CASE("a variant without a second hierarchy only contributes the first term") {
    LossFixture fx;
    fx.out.output_2nd.reset();
    const auto bd = total_loss<double>(fx.out, fx.targets, 1.5, 1.0);
    CHECK(bd.second == 0.0);
    CHECK(bd.combined == 1.5 * bd.first);
}

namespace {

Weights<double> single_param(double value) {
    Weights<double> w;
    w.insert("x", Tensor<double>::from({1}, {value}, true));
    return w;
}

}  // namespace

TEST_CASE("adam leaves weights alone on zero gradients") {
    auto w = single_param(1.25);
    w.at("x").zero_grad();
    AdamState<double> state;
    adam_step(w, state, AdamParams{});
    CHECK(w.at("x").values()[0] == 1.25);
}

TEST_CASE("the first adam step moves each coordinate by about lr") {
    Weights<double> w;
    w.insert("x", Tensor<double>::from({3}, {1.0, -2.0, 5.0}, true));
    w.at("x").zero_grad();
    auto g = w.at("x").mut_grad();
    g[0] = 0.3;
    g[1] = -40.0;
    g[2] = 1e-3;
    AdamState<double> state;
    AdamParams params;
    params.lr = 1e-4;
    adam_step(w, state, params);
    CHECK(std::abs(w.at("x").values()[0] - (1.0 - 1e-4)) < 1e-7);
    CHECK(std::abs(w.at("x").values()[1] - (-2.0 + 1e-4)) < 1e-7);
    CHECK(std::abs(w.at("x").values()[2] - (5.0 - 1e-4)) < 2e-8);
}

TEST_CASE("adam drives x^2 toward zero, matching a scalar simulation oracle") {
    auto w = single_param(1.0);
    AdamState<double> state;
    AdamParams params;
    params.lr = 0.1;

    // independent scalar simulation of the same recurrence
    double sx = 1.0, sm = 0.0, sv = 0.0;

    for (int step = 1; step <= 100; ++step) {
        w.at("x").zero_grad();
        auto x = w.at("x");
        auto loss = nn::mul(x, x);
        nn::backward(loss);
        adam_step(w, state, params);

        const double sg = 2.0 * sx;
        sm = 0.9 * sm + 0.1 * sg;
        sv = 0.999 * sv + 0.001 * sg * sg;
        const double mh = sm / (1.0 - std::pow(0.9, step));
        const double vh = sv / (1.0 - std::pow(0.999, step));
        sx -= 0.1 * mh / (std::sqrt(vh) + 1e-8);

        CHECK(w.at("x").values()[0] == doctest::Approx(sx).epsilon(1e-9));
    }
    CHECK(std::abs(w.at("x").values()[0]) < 0.1);
}

TEST_CASE("adam aborts on a non-finite gradient, naming the tensor") {
    auto w = single_param(1.0);
    w.at("x").zero_grad();
    w.at("x").mut_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState<double> state;
    CHECK_THROWS_WITH_AS(adam_step(w, state, AdamParams{}), doctest::Contains("'x'"),
                         std::runtime_error);
}

TEST_CASE("clip_grad_norm scales only above the threshold") {
    Weights<double> w;
    w.insert("a", Tensor<double>::from({2}, {0.0, 0.0}, true));
    w.insert("b", Tensor<double>::from({1}, {0.0}, true));
    w.at("a").zero_grad();
    w.at("b").zero_grad();

    SUBCASE("small gradients pass through") {
        w.at("a").mut_grad()[0] = 0.3;
        w.at("b").mut_grad()[0] = 0.4;
        const double norm = clip_grad_norm(w, 1.0);
        CHECK(norm == doctest::Approx(0.5));
        CHECK(w.at("a").grad()[0] == 0.3);
    }
    SUBCASE("large gradients are rescaled to the limit") {
        w.at("a").mut_grad()[0] = 1.2;
        w.at("a").mut_grad()[1] = 1.6;  // norm 2.0
        const double norm = clip_grad_norm(w, 1.0);
        CHECK(norm == doctest::Approx(2.0));
        double after = 0.0;
        for (const double g : w.at("a").grad()) after += g * g;
        CHECK(std::sqrt(after) == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("all-zero gradients never divide by zero") {
        const double norm = clip_grad_norm(w, 1.0);
        CHECK(norm == 0.0);
        CHECK(w.at("a").grad()[0] == 0.0);
    }
}

TEST_CASE("plateau scheduler follows the documented reduce-on-plateau semantics") {
    PlateauScheduler sched(1e-4, 0.1, 10, 1e-4);

    SUBCASE("ten consecutive non-improvements divide the rate by ten") {
        CHECK(sched.observe(0.5) == 1e-4);  // first observation sets the best
        for (int i = 0; i < 9; ++i) CHECK(sched.observe(0.5) == 1e-4);
        CHECK(sched.observe(0.5) == doctest::Approx(1e-5));
    }
    SUBCASE("improvements keep the rate") {
        double metric = 0.1;
        for (int i = 0; i < 30; ++i) {
            metric += 0.01;
            CHECK(sched.observe(metric) == 1e-4);
        }
    }
    SUBCASE("an improvement resets the patience counter") {
        sched.observe(0.5);
        for (int i = 0; i < 9; ++i) sched.observe(0.5);
        CHECK(sched.bad_count() == 9);
        sched.observe(0.6);  // reset
        CHECK(sched.bad_count() == 0);
        for (int i = 0; i < 9; ++i) CHECK(sched.observe(0.6) == 1e-4);
        CHECK(sched.observe(0.6) == doctest::Approx(1e-5));
    }
}

TEST_SUITE_END();
