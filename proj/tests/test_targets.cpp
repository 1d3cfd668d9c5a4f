#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "hft/targets.hpp"

using namespace hft;

TEST_SUITE_BEGIN("targets");

TEST_CASE("onset aligned to a frame decays linearly over three frames") {
    NoteEvent n{60, 10 * 0.016, 10 * 0.016 + 0.4, 80};
    const auto g = notes_to_targets(std::vector{n}, 64, 88);
    const int64_t p = 60 - kPitchMin;
    CHECK(g.onset[g.idx(10, p)] == doctest::Approx(1.0));
    CHECK(g.onset[g.idx(9, p)] == doctest::Approx(2.0 / 3));
    CHECK(g.onset[g.idx(11, p)] == doctest::Approx(2.0 / 3));
    CHECK(g.onset[g.idx(8, p)] == doctest::Approx(1.0 / 3));
    CHECK(g.onset[g.idx(12, p)] == doctest::Approx(1.0 / 3));
    CHECK(g.onset[g.idx(7, p)] == 0.0f);
    CHECK(g.onset[g.idx(13, p)] == 0.0f);
}

TEST_CASE("empty note list produces all-zero grids") {
    const auto g = notes_to_targets({}, 32, 88);
    for (const float v : g.frame) CHECK(v == 0.0f);
    for (const float v : g.onset) CHECK(v == 0.0f);
    for (const float v : g.offset) CHECK(v == 0.0f);
    for (const uint8_t v : g.velocity) CHECK(v == 0);
}

TEST_CASE("velocity appears exactly where the onset target reaches 0.5") {
    NoteEvent n{72, 20 * 0.016, 20 * 0.016 + 0.3, 61};
    const auto g = notes_to_targets(std::vector{n}, 64, 88);
    const int64_t p = 72 - kPitchMin;
    for (int64_t t = 0; t < g.frames; ++t) {
        if (g.onset[g.idx(t, p)] >= 0.5f) {
            CHECK(g.velocity[g.idx(t, p)] == 61);
        } else {
            CHECK(g.velocity[g.idx(t, p)] == 0);
        }
    }
    // aligned onset: +-1 frame has 2/3 >= 0.5, +-2 has 1/3 < 0.5
    CHECK(g.velocity[g.idx(19, p)] == 61);
    CHECK(g.velocity[g.idx(21, p)] == 61);
    CHECK(g.velocity[g.idx(18, p)] == 0);
}

TEST_CASE("frame activity spans onset (inclusive) to offset (exclusive)") {
    NoteEvent n{40, 0.1, 0.2, 90};  // frames 7..12 (0.112..0.192)
    const auto g = notes_to_targets(std::vector{n}, 32, 88);
    const int64_t p = 40 - kPitchMin;
    for (int64_t t = 0; t < 32; ++t) {
        const double ts = t * 0.016;
        const bool active = ts >= 0.1 && ts < 0.2;
        CHECK(g.frame[g.idx(t, p)] == (active ? 1.0f : 0.0f));
    }
}

TEST_CASE("frame grid stays binary and sharpened grids take few levels") {
    NoteEvent n{50, 0.5003, 0.9, 70};  // unaligned onset
    const auto g = notes_to_targets(std::vector{n}, 80, 88);
    const int64_t p = 50 - kPitchMin;
    int positive = 0;
    for (int64_t t = 0; t < g.frames; ++t) {
        const float v = g.onset[g.idx(t, p)];
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        if (v > 0.0f) ++positive;
    }
    CHECK(positive <= 2 * 3 + 1);
}

TEST_CASE("overlapping notes on one pitch combine by max, velocity by nearest onset") {
    NoteEvent a{60, 0.160, 0.480, 40};
    NoteEvent b{60, 0.208, 0.640, 100};  // onsets 3 frames apart
    const auto g = notes_to_targets(std::vector{a, b}, 64, 88);
    const int64_t p = 60 - kPitchMin;
    // frame 11 (0.176 s): triangle of a gives 1/3, triangle of b gives 1/3 -> max
    CHECK(g.onset[g.idx(10, p)] == doctest::Approx(1.0));
    CHECK(g.onset[g.idx(13, p)] == doctest::Approx(1.0));
    CHECK(g.onset[g.idx(12, p)] ==
          doctest::Approx(std::max(1.0 - 2.0 / 3.0, 2.0 / 3.0)));
    // frame 12 is nearer b's onset (1 frame) than a's (2 frames)
    CHECK(g.velocity[g.idx(12, p)] == 100);
    CHECK(g.velocity[g.idx(10, p)] == 40);
}

TEST_CASE("pitch outside the grid raises") {
    NoteEvent low{20, 0.0, 0.1, 50};
    CHECK_THROWS_AS(notes_to_targets(std::vector{low}, 16, 88), std::invalid_argument);
    NoteEvent narrow{60, 0.0, 0.1, 50};
    CHECK_THROWS_AS(notes_to_targets(std::vector{narrow}, 16, 5), std::invalid_argument);
}

TEST_CASE("slice_frames zero-pads past the recording end") {
    NoteEvent n{60, 0.05, 0.2, 77};
    const auto g = notes_to_targets(std::vector{n}, 20, 88);
    const auto s = g.slice_frames(16, 8);
    CHECK(s.frames == 8);
    for (int64_t t = 0; t < 4; ++t) {
        for (int64_t p = 0; p < 88; ++p) {
            CHECK(s.frame[s.idx(t, p)] == g.frame[g.idx(16 + t, p)]);
        }
    }
    for (int64_t t = 4; t < 8; ++t) {
        for (int64_t p = 0; p < 88; ++p) CHECK(s.frame[s.idx(t, p)] == 0.0f);
    }
}

TEST_SUITE_END();
