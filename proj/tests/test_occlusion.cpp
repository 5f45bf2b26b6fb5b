#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "twoch/errors.hpp"
#include "twoch/model.hpp"
#include "twoch/occlusion.hpp"

using namespace twoch;
using namespace twoch::occlusion;

namespace {

OcclusionSpec tc(double ratio, std::uint64_t seed = 0) {
    OcclusionSpec s;
    s.kind = OcclusionKind::time_consistent;
    s.ratio = ratio;
    s.seed = seed;
    return s;
}

OcclusionSpec jd(double ratio, std::uint64_t seed = 0) {
    OcclusionSpec s = tc(ratio, seed);
    s.kind = OcclusionKind::joint_dropout;
    return s;
}

// Every parameter moves linearly in time.
Matrix linear_motion(std::size_t frames, std::size_t params, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(frames, params);
    for (std::size_t p = 0; p < params; ++p) {
        const double a = u(rng), b = u(rng);
        for (std::size_t f = 0; f < frames; ++f) m(f, p) = a + b * static_cast<double>(f);
    }
    return m;
}

void check_observed_identity(const Matrix& truth, const Matrix& out, const OcclusionMask& mask) {
    for (std::size_t f = 0; f < mask.frames(); ++f)
        for (std::size_t p = 0; p < mask.params(); ++p)
            if (mask.observed(f, p)) REQUIRE(out(f, p) == truth(f, p));
}

model::ModelConfig small_config() {
    auto c = fixtures::tiny_config();
    c.prefix_len = 5;
    c.horizon = 6;
    return c;
}

}  // namespace

TEST_CASE("OcclusionSpec validation and names") {
    CHECK_THROWS_AS(tc(1.5).validate(), ConfigError);
    CHECK_THROWS_AS(tc(-0.1).validate(), ConfigError);
    auto s = tc(0.5);
    s.mean_duration_frames = 0.5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    CHECK(parse_kind("joint_dropout") == OcclusionKind::joint_dropout);
    CHECK(parse_strategy(to_string(RecoveryStrategy::autoregressive)) == RecoveryStrategy::autoregressive);
    CHECK_THROWS_AS(parse_strategy("magic"), ConfigError);
}

TEST_CASE("gen_time_consistent") {
    CHECK_FALSE(gen_time_consistent(tc(0.0), 10, 99).any_occluded());
    CHECK(gen_time_consistent(tc(1.0), 10, 99).occluded_count() == 990);
    CHECK(gen_time_consistent(tc(0.4, 3), 10, 99) == gen_time_consistent(tc(0.4, 3), 10, 99));
    CHECK_FALSE(gen_time_consistent(tc(0.4, 3), 10, 99) == gen_time_consistent(tc(0.4, 4), 10, 99));

    for (double ratio : {0.05, 0.2, 0.5, 0.8}) {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const auto m = gen_time_consistent(tc(ratio, seed), 10, 99);
            CHECK(m.occluded_fraction() >= ratio);
            CHECK(m.ratio_requested() == ratio);
        }
    }

    SUBCASE("runs are contiguous in time per parameter") {
        // With long mean durations most parameters show a single run.
        auto s = tc(0.1, 9);
        s.mean_duration_frames = 50.0;
        const auto m = gen_time_consistent(s, 10, 99);
        std::size_t runs = 0;
        for (std::size_t p = 0; p < 99; ++p)
            for (std::size_t f = 0; f < 10; ++f)
                if (!m.observed(f, p) && (f == 0 || m.observed(f - 1, p))) ++runs;
        CHECK(runs * 5 <= m.occluded_count());
    }
}

TEST_CASE("gen_joint_dropout") {
    CHECK_FALSE(gen_joint_dropout(jd(0.0), 10, 99).any_occluded());
    const auto m = gen_joint_dropout(jd(0.8, 5), 10, 99);
    std::size_t dropped = 0;
    for (std::size_t j = 0; j < 33; ++j) {
        const bool off = !m.observed(0, 3 * j);
        dropped += off;
        for (std::size_t f = 0; f < 10; ++f)
            for (std::size_t k = 0; k < 3; ++k) CHECK(m.observed(f, 3 * j + k) == !off);
    }
    CHECK(dropped == 26);
    CHECK(gen_joint_dropout(jd(1.0), 4, 6).occluded_count() == 24);
    CHECK(gen_joint_dropout(jd(0.5, 1), 10, 99) == gen_joint_dropout(jd(0.5, 1), 10, 99));
    CHECK_THROWS_AS(gen_joint_dropout(jd(0.5), 10, 98), ConfigError);
}

TEST_CASE("apply_mask") {
    std::mt19937_64 rng(1);
    const Matrix prefix = fixtures::random_matrix(10, 9, rng);
    CHECK(apply_mask(prefix, OcclusionMask(10, 9, true)) == prefix);
    CHECK(apply_mask(prefix, OcclusionMask(10, 9, false)) == Matrix(10, 9, 0.0));
    const auto mask = gen_time_consistent(tc(0.3, 2), 10, 9);
    const Matrix out = apply_mask(prefix, mask);
    for (std::size_t f = 0; f < 10; ++f)
        for (std::size_t p = 0; p < 9; ++p) CHECK(out(f, p) == (mask.observed(f, p) ? prefix(f, p) : kOccludedFill));
    CHECK_THROWS_AS(apply_mask(prefix, OcclusionMask(9, 9, true)), DimensionError);
}

TEST_CASE("recover_linear_interp") {
    SUBCASE("midpoint") {
        Matrix x(3, 1, std::vector<double>{0, 0, 2});
        OcclusionMask m(3, 1, true);
        m.set_observed(1, 0, false);
        CHECK(recover_linear_interp(x, m)(1, 0) == 1.0);
    }
    SUBCASE("edges hold the nearest observation") {
        Matrix x(5, 1, std::vector<double>{0, 0, 3, 4, 0});
        OcclusionMask m(5, 1, true);
        m.set_observed(0, 0, false);
        m.set_observed(1, 0, false);
        m.set_observed(4, 0, false);
        const Matrix r = recover_linear_interp(x, m);
        CHECK(r(0, 0) == 3.0);
        CHECK(r(1, 0) == 3.0);
        CHECK(r(4, 0) == 4.0);
    }
    SUBCASE("exact on linear motion for interior occlusion") {
        std::mt19937_64 rng(2);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const Matrix truth = linear_motion(10, 12, rng);
            auto mask = gen_time_consistent(tc(0.5, seed), 10, 12);
            for (std::size_t p = 0; p < 12; ++p) {
                mask.set_observed(0, p, true);
                mask.set_observed(9, p, true);
            }
            const Matrix r = recover_linear_interp(apply_mask(truth, mask), mask);
            for (std::size_t i = 0; i < truth.size(); ++i) CHECK(std::abs(r.values()[i] - truth.values()[i]) <= 1e-12);
        }
    }
    SUBCASE("fully occluded parameter is an error") {
        const auto mask = gen_joint_dropout(jd(1.0), 10, 9);
        CHECK_THROWS_AS(recover_linear_interp(Matrix(10, 9), mask), RecoveryError);
    }
}

TEST_CASE("recover_short_term") {
    const auto c = small_config();
    auto fresh = model::TwoChannelTransformer::init(c, 1);
    std::mt19937_64 rng(3);
    const Matrix history = fixtures::random_matrix(5, 6, rng);
    const Matrix truth = fixtures::random_matrix(5, 6, rng);

    SUBCASE("no occlusion returns the input and skips the model") {
        const OcclusionMask all(5, 6, true);
        const std::size_t calls = fresh.forward_calls();
        CHECK(recover_short_term(history, truth, all, fresh) == truth);
        CHECK(fresh.forward_calls() == calls);
    }
    SUBCASE("full occlusion gives the forecast rows") {
        auto m = model::TwoChannelTransformer::init(c, 2);
        fixtures::randomize_all(m, 3);
        const OcclusionMask none(5, 6, false);
        CHECK(recover_short_term(history, apply_mask(truth, none), none, m) == m.forecast(history).slice_rows(0, 5));
    }
    SUBCASE("zero-velocity model fills with the last history pose") {
        const auto mask = gen_time_consistent(tc(0.5, 4), 5, 6);
        const Matrix r = recover_short_term(history, apply_mask(truth, mask), mask, fresh);
        check_observed_identity(truth, r, mask);
        for (std::size_t f = 0; f < 5; ++f)
            for (std::size_t p = 0; p < 6; ++p)
                if (!mask.observed(f, p)) CHECK(r(f, p) == history(4, p));
    }
    SUBCASE("horizon must cover the window") {
        auto cs = c;
        cs.horizon = 4;
        const auto m = model::TwoChannelTransformer::init(cs, 1);
        const OcclusionMask none(5, 6, false);
        CHECK_THROWS_AS(recover_short_term(history, truth, none, m), RecoveryError);
    }
}

TEST_CASE("recover_autoregressive") {
    const auto c = small_config();
    std::mt19937_64 rng(5);
    const Matrix truth = fixtures::random_matrix(5, 6, rng);

    SUBCASE("no occlusion") {
        const auto m = model::TwoChannelTransformer::init(c, 1);
        CHECK(recover_autoregressive(truth, OcclusionMask(5, 6, true), m) == truth);
        CHECK(m.forward_calls() == 0);
    }
    SUBCASE("call count is counted by instrumentation") {
        auto m = model::TwoChannelTransformer::init(c, 1);
        fixtures::randomize_all(m, 2);
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            const auto mask = gen_time_consistent(tc(0.3, seed), 5, 6);
            m.reset_forward_calls();
            (void)recover_autoregressive(apply_mask(truth, mask), mask, m);
            CHECK(m.forward_calls() == autoregressive_calls(mask));
        }
        OcclusionMask late(5, 6, true);
        late.set_observed(2, 1, false);
        CHECK(autoregressive_calls(late) == 2);  // frames 2-3, then 4
        OcclusionMask first(5, 6, true);
        first.set_observed(0, 0, false);
        CHECK(autoregressive_calls(first) == 2);  // frame 0 is seeded; sweep frames 1-2, 3-4
    }
    SUBCASE("zero-velocity model holds the last reconstructed value") {
        const auto m = model::TwoChannelTransformer::init(c, 3);
        OcclusionMask mask(5, 6, true);
        for (std::size_t f = 2; f < 5; ++f) mask.set_observed(f, 1, false);
        const Matrix r = recover_autoregressive(apply_mask(truth, mask), mask, m);
        check_observed_identity(truth, r, mask);
        for (std::size_t f = 2; f < 5; ++f) CHECK(r(f, 1) == truth(1, 1));

        // In general each occluded cell copies the last frame of the context
        // its sweep step was forecast from.
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto mk = gen_time_consistent(tc(0.5, seed), 5, 6);
            const Matrix out = recover_autoregressive(apply_mask(truth, mk), mk, m);
            std::size_t start = 5;
            for (std::size_t f = 0; f < 5 && start == 5; ++f)
                for (std::size_t p = 0; p < 6; ++p)
                    if (!mk.observed(f, p)) start = std::max<std::size_t>(f, 1);
            for (std::size_t f = start; f < 5; ++f) {
                const std::size_t k = start + 2 * ((f - start) / 2);
                for (std::size_t p = 0; p < 6; ++p)
                    if (!mk.observed(f, p)) CHECK(out(f, p) == out(k - 1, p));
            }
        }
    }
    SUBCASE("an occluded first frame is seeded from the first observation") {
        const auto m = model::TwoChannelTransformer::init(c, 3);
        OcclusionMask mask(5, 6, true);
        mask.set_observed(0, 4, false);
        mask.set_observed(1, 4, false);
        const Matrix r = recover_autoregressive(apply_mask(truth, mask), mask, m);
        CHECK(r(0, 4) == truth(2, 4));
        CHECK(r(1, 4) == truth(2, 4));
        OcclusionMask never(5, 6, true);
        for (std::size_t f = 0; f < 5; ++f) never.set_observed(f, 0, false);
        const Matrix z = recover_autoregressive(apply_mask(truth, never), never, m);
        for (std::size_t f = 0; f < 5; ++f) CHECK(z(f, 0) == kOccludedFill);
    }
    SUBCASE("observed cells are untouched for a trained-like model") {
        auto m = model::TwoChannelTransformer::init(c, 4);
        fixtures::randomize_all(m, 5);
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto mask = gen_time_consistent(tc(0.6, seed), 5, 6);
            check_observed_identity(truth, recover_autoregressive(apply_mask(truth, mask), mask, m), mask);
        }
    }
}

TEST_CASE("mask export") {
    OcclusionMask m(2, 3, true);
    m.set_observed(1, 2, false);
    CHECK(mask_to_csv(m) == "1,1,1\n1,1,0\n");
}
