#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "patchbank/aggregation.hpp"
#include "patchbank/bpm.hpp"
#include "test_util.hpp"

using namespace patchbank;

TEST(Aggregation, MeanOfLayers) {
    const GridShape g{1, 2};
    std::vector<PatchFeatureMap> layers{PatchFeatureMap(g, 2, {1, 2, 3, 4}), PatchFeatureMap(g, 2, {3, 6, 5, 0})};
    const auto avg = aggregate_layers(layers);
    EXPECT_EQ(avg.values, (std::vector<float>{2, 4, 4, 2}));
}

TEST(Aggregation, SingleLayerIsIdentity) {
    std::mt19937_64 gen(5);
    const PatchFeatureMap one({3, 3}, 4, testutil::random_matrix(gen, 9, 4));
    std::vector<PatchFeatureMap> layers{one};
    EXPECT_EQ(aggregate_layers(layers).values, one.values);
}

TEST(Aggregation, RejectsMismatchAndEmpty) {
    std::vector<PatchFeatureMap> none;
    EXPECT_THROW(aggregate_layers(none), ShapeError);
    std::vector<PatchFeatureMap> mixed{PatchFeatureMap({1, 2}, 2), PatchFeatureMap({2, 1}, 2)};
    EXPECT_THROW(aggregate_layers(mixed), ShapeError);
}

TEST(Aggregation, L2NormalizeLayersOption) {
    const GridShape g{1, 1};
    std::vector<PatchFeatureMap> layers{PatchFeatureMap(g, 2, {3, 4}), PatchFeatureMap(g, 2, {0, 10})};
    const auto avg = aggregate_layers(layers, true);
    EXPECT_NEAR(avg.values[0], 0.3f, 1e-6);
    EXPECT_NEAR(avg.values[1], 0.9f, 1e-6);
}

TEST(Bpm, CenterSpikeThreeByThree) {
    std::vector<float> v(9, 0.0f);
    v[4] = 0.9f;
    const auto s = smooth_attention(AttentionMap({3, 3}, v), 3);
    for (float x : s.values) {
        EXPECT_NEAR(x, 0.1f, 1e-7);
    }
}

TEST(Bpm, KernelOneIsIdentity) {
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(35);
    for (auto& x : v) {
        x = u(gen);
    }
    const AttentionMap a({5, 7}, v);
    EXPECT_EQ(smooth_attention(a, 1).values, v);
    EXPECT_EQ(smooth_attention(a, 1, BorderMode::Renorm).values, v);
}

TEST(Bpm, MatchesDirectConvolution) {
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = gen() % 12 + 3;
        const std::size_t w = gen() % 12 + 3;
        const int max_n = static_cast<int>(2 * std::min(h, w) - 1);
        const int n = 2 * static_cast<int>(gen() % static_cast<unsigned>((max_n + 1) / 2)) + 1;
        std::vector<float> v(h * w);
        for (auto& x : v) {
            x = u(gen);
        }
        for (bool renorm : {false, true}) {
            const auto got = smooth_attention(AttentionMap({h, w}, v), n, renorm ? BorderMode::Renorm : BorderMode::Zero);
            const auto want = oracle::box_filter(v, h, w, n, renorm);
            for (std::size_t i = 0; i < v.size(); ++i) {
                ASSERT_NEAR(got.values[i], want[i], 1e-6);
            }
        }
    }
}

TEST(Bpm, InvalidKernelSizes) {
    const AttentionMap a({3, 3}, std::vector<float>(9, 0.5f));
    EXPECT_THROW(smooth_attention(a, 2), ParameterError);
    EXPECT_THROW(smooth_attention(a, 0), ParameterError);
    EXPECT_THROW(smooth_attention(a, 7), ParameterError);
    EXPECT_NO_THROW(smooth_attention(a, 5));
}

TEST(Bpm, BinarizeIsInclusive) {
    const AttentionMap a({1, 3}, {0.05f, 0.1f, 0.2f});
    EXPECT_EQ(binarize(a, 0.1).bits, (std::vector<std::uint8_t>{0, 1, 1}));
}

TEST(Bpm, MaskMonotoneInLambda) {
    std::mt19937_64 gen(13);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(64);
    for (auto& x : v) {
        x = u(gen);
    }
    const AttentionMap a({8, 8}, v);
    std::size_t prev = 65;
    for (double lambda = 0.0; lambda <= 1.0; lambda += 0.05) {
        const auto m = binarize(a, lambda);
        EXPECT_LE(m.popcount(), prev);
        prev = m.popcount();
    }
}

TEST(Bpm, SmoothingMonotoneInAttention) {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> a(49);
    std::vector<float> b(49);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = u(gen);
        b[i] = a[i] + u(gen);
    }
    const auto sa = smooth_attention(AttentionMap({7, 7}, a), 5);
    const auto sb = smooth_attention(AttentionMap({7, 7}, b), 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_LE(sa.values[i], sb.values[i]);
    }
}

TEST(Bpm, EmptyMaskFallsBackToAllPatches) {
    const PatchFeatureMap f({2, 2}, 1, {1, 2, 3, 4});
    const auto masked = apply_mask(f, BinaryMask{{2, 2}, {0, 0, 0, 0}});
    EXPECT_TRUE(masked.fallback);
    EXPECT_EQ(masked.size(), 4u);
    const auto some = apply_mask(f, BinaryMask{{2, 2}, {0, 1, 0, 1}});
    EXPECT_FALSE(some.fallback);
    EXPECT_EQ(some.indices, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(some.vectors, (std::vector<float>{2, 4}));
}

TEST(Bpm, SoftMaskScalesByWeight) {
    const PatchFeatureMap f({1, 2}, 2, {2, 4, 6, 8});
    const auto soft = apply_soft_mask(f, AttentionMap({1, 2}, {0.5f, 2.0f}));
    EXPECT_EQ(soft.size(), 2u);
    EXPECT_EQ(soft.vectors, (std::vector<float>{1, 2, 6, 8}));
}
