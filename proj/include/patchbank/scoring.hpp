#pragma once

// Top k-ratio feature matching. The image score is the mean of the K
// largest patch scores, K = ceil(k/100 * N), where N counts every grid cell
// and masked-out cells score 0.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "patchbank/bank.hpp"
#include "patchbank/error.hpp"
#include "patchbank/preprocess.hpp"
#include "patchbank/search.hpp"

namespace patchbank {

struct TopK {
    double score = 0.0;
    std::vector<std::size_t> indices;  // descending score, ties by lower index
};

struct ScoreResult {
    double image_score = 0.0;
    GridShape grid;
    std::vector<double> patch_scores;  // grid-aligned; masked cells are 0
    std::vector<std::size_t> topk_indices;
    double k_ratio = 5.0;
    bool fallback_used = false;
};

inline void check_k_ratio(double k) {
    if (!(k > 0.0 && k <= 100.0)) {
        throw ParameterError("k-ratio must lie in (0, 100], got " + std::to_string(k));
    }
}

inline std::size_t topk_count(std::size_t n, double k) {
    check_k_ratio(k);
    return std::clamp<std::size_t>(rounded_ceil(k * static_cast<double>(n) / 100.0), 1, n);
}

namespace detail {

inline TopK mean_of_ordered(std::span<const double> scores, std::vector<std::size_t> order, std::size_t count) {
    order.resize(count);
    double sum = 0.0;
    for (auto i : order) {
        sum += scores[i];
    }
    return {sum / static_cast<double>(count), std::move(order)};
}

}  // namespace detail

// Reference form: full descending sort.
inline TopK topk_score(std::span<const double> scores, double k) {
    if (scores.empty()) {
        throw ShapeError("topk_score on an empty score map");
    }
    const std::size_t count = topk_count(scores.size(), k);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    });
    return detail::mean_of_ordered(scores, std::move(order), count);
}

// Same result via partial selection; only the K winners get sorted.
inline TopK topk_score_select(std::span<const double> scores, double k) {
    if (scores.empty()) {
        throw ShapeError("topk_score on an empty score map");
    }
    const std::size_t count = topk_count(scores.size(), k);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    if (count < order.size()) {
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), before);
    }
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), before);
    return detail::mean_of_ordered(scores, std::move(order), count);
}

// Scores one preprocessed image against a bank.
inline ScoreResult score_processed(const ProcessedImage& image, const MemoryBank& bank, double k) {
    check_k_ratio(k);
    if (image.masked.dim != bank.dim()) {
        throw ShapeError("image feature dim " + std::to_string(image.masked.dim) + " does not match bank dim " +
                         std::to_string(bank.dim()));
    }
    const auto dist = nearest_distances(image.masked, bank.view(), bank.squared_norms());

    ScoreResult r;
    r.grid = image.features.grid;
    r.k_ratio = k;
    r.fallback_used = image.masked.fallback;
    r.patch_scores.assign(r.grid.cells(), 0.0);
    for (std::size_t i = 0; i < dist.size(); ++i) {
        r.patch_scores[dist.grid_index[i]] = dist.distances[i];
    }
    TopK top = topk_score_select(r.patch_scores, k);
    r.image_score = top.score;
    r.topk_indices = std::move(top.indices);
    return r;
}

inline ScoreResult score_image(std::span<const PatchFeatureMap> layers, const AttentionMap& attention,
                               const MemoryBank& bank, const FeatureOptions& opts, double k) {
    return score_processed(process_image(layers, attention, opts), bank, k);
}

struct PixelHeatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;

    float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

namespace detail {

// Pixel coordinate of the center of cell `i` when `pixels` are split into
// `cells` equal strips.
inline std::size_t cell_center(std::size_t i, std::size_t cells, std::size_t pixels) {
    return static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(pixels) /
                                               static_cast<double>(cells)));
}

// Bilinear interpolation weights along one axis; knots outside the range
// clamp to the nearest knot.
struct AxisTap {
    std::size_t lo = 0;
    std::size_t hi = 0;
    double t = 0.0;
};

inline std::vector<AxisTap> axis_taps(std::size_t cells, std::size_t pixels) {
    std::vector<std::size_t> knots(cells);
    for (std::size_t i = 0; i < cells; ++i) {
        knots[i] = cell_center(i, cells, pixels);
    }
    std::vector<AxisTap> taps(pixels);
    std::size_t seg = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
        if (p <= knots.front()) {
            taps[p] = {0, 0, 0.0};
            continue;
        }
        if (p >= knots.back()) {
            taps[p] = {cells - 1, cells - 1, 0.0};
            continue;
        }
        while (knots[seg + 1] < p) {
            ++seg;
        }
        const double span = static_cast<double>(knots[seg + 1] - knots[seg]);
        taps[p] = {seg, seg + 1, static_cast<double>(p - knots[seg]) / span};
    }
    return taps;
}

inline std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) {
        v /= sum;
    }
    return k;
}

// Separable blur with replicated borders.
inline void blur_rows(std::vector<double>& img, std::size_t h, std::size_t w, const std::vector<double>& kernel) {
    const long radius = static_cast<long>(kernel.size() / 2);
    std::vector<double> line(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long o = -radius; o <= radius; ++o) {
                const long xx = std::clamp<long>(static_cast<long>(x) + o, 0, static_cast<long>(w) - 1);
                acc += kernel[static_cast<std::size_t>(o + radius)] * img[y * w + static_cast<std::size_t>(xx)];
            }
            line[x] = acc;
        }
        std::copy(line.begin(), line.end(), img.begin() + static_cast<std::ptrdiff_t>(y * w));
    }
}

inline void blur_cols(std::vector<double>& img, std::size_t h, std::size_t w, const std::vector<double>& kernel) {
    const long radius = static_cast<long>(kernel.size() / 2);
    std::vector<double> line(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) {
            double acc = 0.0;
            for (long o = -radius; o <= radius; ++o) {
                const long yy = std::clamp<long>(static_cast<long>(y) + o, 0, static_cast<long>(h) - 1);
                acc += kernel[static_cast<std::size_t>(o + radius)] * img[static_cast<std::size_t>(yy) * w + x];
            }
            line[y] = acc;
        }
        for (std::size_t y = 0; y < h; ++y) {
            img[y * w + x] = line[y];
        }
    }
}

}  // namespace detail

// Upsamples a patch score grid to image resolution: bilinear interpolation
// between patch-center pixels, then a Gaussian blur of width sigma (pixels).
inline PixelHeatmap render_heatmap(std::span<const double> patch_scores, GridShape grid, std::size_t image_h,
                                   std::size_t image_w, double sigma = 4.0) {
    if (grid.cells() == 0 || patch_scores.size() != grid.cells()) {
        throw ShapeError("patch score map does not match its grid");
    }
    if (image_h < grid.height || image_w < grid.width) {
        throw ShapeError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                         " smaller than patch grid " + to_string(grid));
    }
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
        throw ParameterError("heatmap sigma must be finite and >= 0");
    }
    const auto ty = detail::axis_taps(grid.height, image_h);
    const auto tx = detail::axis_taps(grid.width, image_w);
    std::vector<double> img(image_h * image_w);
    for (std::size_t y = 0; y < image_h; ++y) {
        for (std::size_t x = 0; x < image_w; ++x) {
            const auto& a = ty[y];
            const auto& b = tx[x];
            auto s = [&](std::size_t r, std::size_t c) { return patch_scores[r * grid.width + c]; };
            const double top = (1.0 - b.t) * s(a.lo, b.lo) + b.t * s(a.lo, b.hi);
            const double bottom = (1.0 - b.t) * s(a.hi, b.lo) + b.t * s(a.hi, b.hi);
            img[y * image_w + x] = (1.0 - a.t) * top + a.t * bottom;
        }
    }
    if (sigma > 0.0) {
        const auto kernel = detail::gaussian_kernel(sigma);
        detail::blur_rows(img, image_h, image_w, kernel);
        detail::blur_cols(img, image_h, image_w, kernel);
    }
    PixelHeatmap out{image_h, image_w, std::vector<float>(img.size())};
    for (std::size_t i = 0; i < img.size(); ++i) {
        out.values[i] = static_cast<float>(std::max(0.0, img[i]));
    }
    return out;
}

}  // namespace patchbank
