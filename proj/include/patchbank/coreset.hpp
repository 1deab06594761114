#pragma once

// Greedy k-center (farthest-first traversal) coreset selection under L2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "patchbank/error.hpp"
#include "patchbank/parallel.hpp"
#include "patchbank/rng.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

inline double squared_l2(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        acc += d * d;
    }
    return acc;
}

// Index of the first center for a given seed: uniform over [0, rows).
inline std::size_t seeded_first_center(std::size_t rows, std::uint64_t seed) {
    SplitMix64 rng(seed);
    return static_cast<std::size_t>(rng.below(rows));
}

// Returns m distinct row indices in selection order. Each new center is the
// point farthest from its nearest chosen center; ties go to the lowest index.
inline std::vector<std::size_t> coreset_subsample_from(MatrixView points, std::size_t m, std::size_t first) {
    if (points.rows == 0) {
        throw ParameterError("coreset_subsample on an empty point set");
    }
    if (m < 1 || m > points.rows) {
        throw ParameterError("coreset target " + std::to_string(m) + " outside [1, " + std::to_string(points.rows) +
                             "]");
    }
    if (first >= points.rows) {
        throw ParameterError("first coreset center out of range");
    }

    const std::size_t n = points.rows;
    std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> selected;
    selected.reserve(m);

    constexpr std::size_t kChunk = 4096;
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::size_t> chunk_best(chunks);

    std::size_t center = first;
    for (;;) {
        selected.push_back(center);
        if (selected.size() == m) {
            break;
        }
        min_dist[center] = 0.0;
        const auto c = points.row(center);
        parallel_for(chunks, [&](std::size_t chunk) {
            const std::size_t lo = chunk * kChunk;
            const std::size_t hi = std::min(n, lo + kChunk);
            std::size_t best = lo;
            for (std::size_t i = lo; i < hi; ++i) {
                const double d = squared_l2(points.row(i), c);
                if (d < min_dist[i]) {
                    min_dist[i] = d;
                }
                if (min_dist[i] > min_dist[best]) {
                    best = i;
                }
            }
            chunk_best[chunk] = best;
        });
        std::size_t best = chunk_best[0];
        for (std::size_t k = 1; k < chunks; ++k) {
            if (min_dist[chunk_best[k]] > min_dist[best]) {
                best = chunk_best[k];
            }
        }
        // Every remaining point coincides with a center: fill with the
        // lowest unselected indices so the result stays distinct.
        if (min_dist[best] <= 0.0) {
            std::vector<std::uint8_t> taken(n, 0);
            for (auto s : selected) {
                taken[s] = 1;
            }
            for (std::size_t i = 0; i < n && selected.size() < m; ++i) {
                if (!taken[i]) {
                    selected.push_back(i);
                }
            }
            break;
        }
        center = best;
    }
    return selected;
}

inline std::vector<std::size_t> coreset_subsample(MatrixView points, std::size_t m, std::uint64_t seed) {
    if (points.rows == 0) {
        throw ParameterError("coreset_subsample on an empty point set");
    }
    return coreset_subsample_from(points, m, seeded_first_center(points.rows, seed));
}

// Max over points of the distance to the nearest listed center.
inline double coverage_radius(MatrixView points, std::span<const std::size_t> centers) {
    double worst = 0.0;
    for (std::size_t i = 0; i < points.rows; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (auto c : centers) {
            best = std::min(best, squared_l2(points.row(i), points.row(c)));
        }
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

// Target size for a ratio in (0, 1]: ceil(ratio * total), at least 1.
inline std::size_t coreset_target(std::size_t total, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) {
        throw ParameterError("coreset ratio must lie in (0, 1], got " + std::to_string(ratio));
    }
    const std::size_t m = rounded_ceil(ratio * static_cast<double>(total));
    return std::clamp<std::size_t>(m, 1, total);
}

}  // namespace patchbank
