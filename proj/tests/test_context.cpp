#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "bmcx/context.hpp"
#include "bmcx/data.hpp"
#include "test_util.hpp"

using namespace bmcx;
using namespace bmcx::testutil;

TEST_CASE("alpha weighting and the bin map") {
    const RiskProfile profile{5.0, 10};
    REQUIRE(alpha_weight(0.05, 0, profile) == 5.0);
    REQUIRE(alpha_weight(0.05, 3, profile) == 1.0);
    // t=1 overflows the literal bin map; the last class stays favored.
    REQUIRE(alpha_weight(1.0, 9, profile) == 5.0);
    REQUIRE(favored_class(1.0, 10) == 9);
    REQUIRE(favored_class(0.349, 10) == 3);
    REQUIRE_THROWS_AS(alpha_weight(0.5, 10, profile), std::invalid_argument);
    REQUIRE_THROWS_AS(alpha_weight(0.5, 0, RiskProfile{0.5, 10}), std::invalid_argument);
}

TEST_CASE("weighted cross-entropy") {
    RngStream rng(8);
    const Tensor logits = random_tensor({12, 6}, rng, -2.0, 2.0);
    std::vector<int32_t> labels(12);
    for (auto& y : labels) y = static_cast<int32_t>(rng.below(6));

    SECTION("beta = 1 collapses to plain cross-entropy") {
        Tape tape;
        const int l = tape.leaf(logits);
        const int plain = ce_loss(tape, l, labels);
        const int weighted = weighted_ce_loss(tape, l, labels, 0.37, RiskProfile{1.0, 6});
        REQUIRE(tape.value(weighted).data[0] == tape.value(plain).data[0]);
    }
    SECTION("a batch made of the favored class scales exactly by beta") {
        const double t = 0.4;  // favored class: floor(0.4*6) = 2
        std::vector<int32_t> favored(12, 2);
        Tape tape;
        const int l = tape.leaf(logits);
        const int plain = ce_loss(tape, l, favored);
        const int weighted = weighted_ce_loss(tape, l, favored, t, RiskProfile{5.0, 6});
        REQUIRE(tape.value(weighted).data[0] == 5.0 * tape.value(plain).data[0]);
    }
    SECTION("mixed batch matches the brute-force per-sample sum") {
        const double t = 0.75;  // favored class 4
        const RiskProfile profile{5.0, 6};
        Tape tape;
        const int l = tape.leaf(logits);
        const int lp = tape.log_softmax(l);
        const Tensor logp = tape.value(lp);
        double expected = 0.0;
        for (int64_t i = 0; i < 12; ++i) {
            const double a = labels[static_cast<size_t>(i)] == 4 ? 5.0 : 1.0;
            expected += a * -logp.data[i * 6 + labels[static_cast<size_t>(i)]];
        }
        expected /= 12.0;
        const int weighted = weighted_ce_loss(tape, l, labels, t, profile);
        REQUIRE(tape.value(weighted).data[0] == Catch::Approx(expected).margin(1e-12));
    }
}

TEST_CASE("corruption operators") {
    RngStream data_rng(5);
    SECTION("severity zero is the identity, bit-exact") {
        const Tensor x = random_tensor({4, 3, 5, 5}, data_rng);
        for (CorruptionKind kind : {CorruptionKind::GaussianNoise, CorruptionKind::Contrast}) {
            RngStream rng(1);
            const Tensor out = corrupt(x, 0.0, {kind, 0.5, 0}, rng);
            REQUIRE(bit_equal(out.data, x.data));
        }
    }
    SECTION("gaussian distortion matches the half-normal mean") {
        const int64_t n = 100000;
        const Tensor x = Tensor::zeros({n, 1});
        RngStream rng(77);
        const Tensor out = corrupt(x, 1.0, {CorruptionKind::GaussianNoise, 0.5, 0}, rng);
        double mean_abs = 0.0;
        for (double v : out.data) mean_abs += std::abs(v);
        mean_abs /= static_cast<double>(n);
        const double expected = 0.5 * std::sqrt(2.0 / std::numbers::pi);
        REQUIRE(mean_abs == Catch::Approx(expected).epsilon(0.05));
    }
    SECTION("full contrast collapse flattens each image to its mean") {
        RngStream rng(9);
        Tensor x = random_tensor({2, 1, 3, 3}, rng);
        const Tensor out = corrupt(x, 1.0, {CorruptionKind::Contrast, 1.0, 0}, rng);
        for (int64_t i = 0; i < 2; ++i) {
            double mu = 0.0;
            for (int64_t j = 0; j < 9; ++j) mu += x.data[i * 9 + j];
            mu /= 9.0;
            for (int64_t j = 0; j < 9; ++j) {
                REQUIRE(out.data[i * 9 + j] == Catch::Approx(mu).margin(1e-12));
            }
        }
    }
    SECTION("expected distortion strictly increases with severity") {
        RngStream rng(123);
        const Tensor x = random_tensor({10000, 4}, rng, 0.0, 1.0);
        for (CorruptionKind kind : {CorruptionKind::GaussianNoise, CorruptionKind::Contrast}) {
            double prev = -1.0;
            for (double t : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
                RngStream noise(42);
                const Tensor out = corrupt(x, t, {kind, 0.5, 0}, noise);
                double dist = 0.0;
                for (size_t i = 0; i < out.data.size(); ++i) dist += std::abs(out.data[i] - x.data[i]);
                dist /= static_cast<double>(out.data.size());
                REQUIRE(dist > prev);
                prev = dist;
            }
        }
    }
}

TEST_CASE("class distribution") {
    SECTION("uniform at t = 0.5") {
        for (int32_t n : {2, 5, 10, 17}) {
            const auto p = class_distribution(0.5, {n});
            for (double v : p) REQUIRE(v == Catch::Approx(1.0 / n).margin(1e-12));
        }
    }
    SECTION("t = 0 with N = 10 gives raw weights 0..0.9 normalized by 4.5") {
        const auto p = class_distribution(0.0, {10});
        for (int32_t c = 0; c < 10; ++c) {
            REQUIRE(p[static_cast<size_t>(c)] == Catch::Approx((0.1 * c) / 4.5).margin(1e-12));
        }
    }
    SECTION("normalized, non-negative for random (t, N)") {
        RngStream rng(6);
        for (int trial = 0; trial < 1000; ++trial) {
            const double t = rng.u01();
            const int32_t n = 2 + static_cast<int32_t>(rng.below(30));
            const auto p = class_distribution(t, {n});
            double sum = 0.0;
            for (double v : p) {
                REQUIRE(v >= 0.0);
                sum += v;
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("raw weights stay in [0,1] over a dense grid") {
        for (int32_t n = 2; n <= 24; ++n) {
            for (int ti = 0; ti <= 50; ++ti) {
                const double t = ti / 50.0;
                for (int32_t c = 0; c < n; ++c) {
                    const double raw = raw_class_weight(t, c, {n});
                    REQUIRE(raw >= 0.0);
                    REQUIRE(raw <= 1.0);
                }
            }
        }
    }
    SECTION("raw weight is affine in t: three collinear points") {
        const ShiftSpec spec{7};
        for (int32_t c = 0; c < 7; ++c) {
            const double a = raw_class_weight(0.1, c, spec);
            const double b = raw_class_weight(0.45, c, spec);
            const double d = raw_class_weight(0.8, c, spec);
            REQUIRE(b - a == Catch::Approx(d - b).margin(1e-12));
        }
    }
}

TEST_CASE("contextual sampler") {
    const int32_t n_classes = 10;
    Dataset ds = synth_blobs(n_classes, 4, 20, 0.1, 3);
    const ShiftSpec spec{n_classes};

    auto empirical = [&](double t, int64_t draws) {
        RngStream rng(99);
        const Batch b = sample_contextual_batch(ds, t, spec, draws, rng);
        std::vector<double> freq(static_cast<size_t>(n_classes), 0.0);
        for (int32_t y : b.y) freq[static_cast<size_t>(y)] += 1.0 / static_cast<double>(draws);
        return freq;
    };

    SECTION("total-variation distance to the target below 0.02") {
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const auto p = class_distribution(t, spec);
            const auto f = empirical(t, 100000);
            double tv = 0.0;
            for (size_t c = 0; c < p.size(); ++c) tv += std::abs(p[c] - f[c]);
            tv *= 0.5;
            REQUIRE(tv < 0.02);
        }
    }
    SECTION("zero-weight class is essentially never drawn") {
        const auto f = empirical(0.0, 100000);
        REQUIRE(f[0] < 0.005);
    }
    SECTION("chi-squared goodness of fit at significance 0.001") {
        // df = 9 critical value; t=0 excluded since class 0 has zero mass.
        const double critical = 27.877;
        for (double t : {0.2, 0.5, 0.9}) {
            const auto p = class_distribution(t, spec);
            const int64_t draws = 100000;
            RngStream rng(1234);
            const Batch b = sample_contextual_batch(ds, t, spec, draws, rng);
            std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
            for (int32_t y : b.y) ++counts[static_cast<size_t>(y)];
            double stat = 0.0;
            for (size_t c = 0; c < p.size(); ++c) {
                const double expect = p[c] * static_cast<double>(draws);
                if (expect > 0.0) {
                    const double d = static_cast<double>(counts[c]) - expect;
                    stat += d * d / expect;
                }
            }
            REQUIRE(stat < critical);
        }
    }
    SECTION("batch size zero gives an empty batch") {
        RngStream rng(1);
        const Batch b = sample_contextual_batch(ds, 0.3, spec, 0, rng);
        REQUIRE(b.x.dim(0) == 0);
        REQUIRE(b.y.empty());
    }
    SECTION("empty class with positive probability is an error") {
        Dataset sparse;
        sparse.images = Tensor::zeros({4, 2});
        sparse.labels = {0, 0, 1, 1};
        sparse.num_classes = 3;  // class 2 has no samples
        sparse.rebuild_class_index();
        RngStream rng(1);
        REQUIRE_THROWS_WITH(sample_contextual_batch(sparse, 0.0, {3}, 256, rng),
                            Catch::Matchers::ContainsSubstring("no samples"));
    }
}
