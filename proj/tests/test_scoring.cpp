#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "patchbank/scoring.hpp"
#include "test_util.hpp"

using namespace patchbank;

TEST(Scoring, TopKCountHandCases) {
    EXPECT_EQ(topk_count(20, 5.0), 1u);
    EXPECT_EQ(topk_count(10, 20.0), 2u);
    EXPECT_EQ(topk_count(196, 5.0), 10u);
    EXPECT_EQ(topk_count(100, 0.1), 1u);
    EXPECT_EQ(topk_count(100, 100.0), 100u);
    EXPECT_EQ(topk_count(3, 0.5), 1u);
    EXPECT_THROW(topk_count(10, 0.0), ParameterError);
    EXPECT_THROW(topk_count(10, 100.5), ParameterError);
}

TEST(Scoring, HandExample) {
    std::vector<double> s(10, 1.0);
    s[0] = 9.0;
    const auto t = topk_score(s, 20.0);
    EXPECT_DOUBLE_EQ(t.score, 5.0);
    EXPECT_EQ(t.indices, (std::vector<std::size_t>{0, 1}));
}

TEST(Scoring, SelectMatchesSortExactly) {
    std::mt19937_64 gen(41);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = gen() % 300 + 1;
        std::vector<double> s(n);
        const bool ties = trial % 2 == 0;
        for (auto& v : s) {
            v = ties ? static_cast<double>(gen() % 5) : std::uniform_real_distribution<double>(0, 10)(gen);
        }
        const double k = std::uniform_real_distribution<double>(0.01, 100.0)(gen);
        const auto a = topk_score(s, k);
        const auto b = topk_score_select(s, k);
        EXPECT_EQ(a.score, b.score);
        EXPECT_EQ(a.indices, b.indices);
        EXPECT_EQ(a.score, oracle::topk_mean(s, topk_count(n, k)));
    }
}

TEST(Scoring, TopKMeanBoundedByMaxAndMean) {
    std::mt19937_64 gen(42);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(gen() % 100 + 1);
        double sum = 0.0;
        for (auto& v : s) {
            v = std::uniform_real_distribution<double>(0, 1)(gen);
            sum += v;
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double prev = mx;
        for (double k : {0.1, 1.0, 5.0, 20.0, 50.0, 100.0}) {
            const double v = topk_score(s, k).score;
            EXPECT_LE(v, prev + 1e-12);
            prev = v;
        }
        EXPECT_NEAR(prev, sum / static_cast<double>(s.size()), 1e-12);
    }
}

namespace {

MemoryBank bank_of(std::vector<float> rows, std::size_t dim) { return MemoryBank(dim, std::move(rows), BankMeta{}); }

}  // namespace

TEST(Scoring, MaskedCellsScoreZero) {
    const GridShape g{2, 2};
    ProcessedImage img;
    img.features = PatchFeatureMap(g, 1, {10, 0, 0, 20});
    img.masked = apply_mask(img.features, BinaryMask{g, {0, 1, 1, 1}});
    const auto bank = bank_of({0.0f}, 1);
    const auto r = score_processed(img, bank, 50.0);
    EXPECT_EQ(r.patch_scores, (std::vector<double>{0, 0, 0, 20}));
    EXPECT_DOUBLE_EQ(r.image_score, 10.0);  // K = 2 of N = 4
    EXPECT_EQ(r.topk_indices, (std::vector<std::size_t>{3, 0}));
    EXPECT_FALSE(r.fallback_used);
}

TEST(Scoring, FallbackFlagPropagates) {
    const GridShape g{1, 2};
    ProcessedImage img;
    img.features = PatchFeatureMap(g, 1, {1, 2});
    img.masked = apply_mask(img.features, BinaryMask{g, {0, 0}});
    const auto r = score_processed(img, bank_of({0.0f}, 1), 100.0);
    EXPECT_TRUE(r.fallback_used);
    EXPECT_DOUBLE_EQ(r.image_score, 1.5);
}

TEST(Scoring, BankDimMismatch) {
    ProcessedImage img;
    img.features = PatchFeatureMap({1, 1}, 2, {1, 2});
    img.masked = apply_mask(img.features, BinaryMask{{1, 1}, {1}});
    EXPECT_THROW(score_processed(img, bank_of({0.0f}, 1), 5.0), ShapeError);
}

TEST(Heatmap, ConstantScoresGiveConstantMap) {
    const std::vector<double> s(9, 2.5);
    const auto h = render_heatmap(s, {3, 3}, 48, 48, 4.0);
    for (float v : h.values) {
        EXPECT_NEAR(v, 2.5f, 1e-5);
    }
}

TEST(Heatmap, ExactAtPatchCentersWithoutBlur) {
    std::mt19937_64 gen(43);
    std::vector<double> s(12);
    for (auto& v : s) {
        v = std::uniform_real_distribution<double>(0, 3)(gen);
    }
    const auto h = render_heatmap(s, {3, 4}, 48, 64, 0.0);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_FLOAT_EQ(h.at(r * 16 + 8, c * 16 + 8), static_cast<float>(s[r * 4 + c]));
        }
    }
}

TEST(Heatmap, PeakInsideHotCell) {
    std::vector<double> s(196, 0.0);
    s[5 * 14 + 9] = 1.0;
    const auto h = render_heatmap(s, {14, 14}, 224, 224, 4.0);
    const auto it = std::max_element(h.values.begin(), h.values.end());
    const auto idx = static_cast<std::size_t>(it - h.values.begin());
    EXPECT_EQ(idx / 224 / 16, 5u);
    EXPECT_EQ(idx % 224 / 16, 9u);
    EXPECT_EQ(h.at(0, 0), 0.0f);
}

TEST(Heatmap, RejectsBadShapes) {
    const std::vector<double> s(4, 1.0);
    EXPECT_THROW(render_heatmap(s, {3, 3}, 10, 10), ShapeError);
    EXPECT_THROW(render_heatmap(s, {2, 2}, 1, 10), ShapeError);
    EXPECT_THROW(render_heatmap(s, {2, 2}, 10, 10, -1.0), ParameterError);
}
