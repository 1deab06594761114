#pragma once

// Anomaly-type clustering: pool patch embeddings per image, then k-means.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string_view>
#include <vector>

#include "patchbank/error.hpp"
#include "patchbank/rng.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

enum class Pooling { TopK, All, Max };

inline Pooling parse_pooling(std::string_view s) {
    if (s == "topk") {
        return Pooling::TopK;
    }
    if (s == "all") {
        return Pooling::All;
    }
    if (s == "max") {
        return Pooling::Max;
    }
    throw ParameterError("unknown pooling '" + std::string(s) + "' (expected topk, all or max)");
}

inline std::vector<double> pool_topk_features(const PatchFeatureMap& feats, std::span<const std::size_t> indices) {
    if (indices.empty()) {
        throw ParameterError("pooling needs at least one patch index");
    }
    std::vector<double> acc(feats.dim, 0.0);
    for (auto i : indices) {
        if (i >= feats.patch_count()) {
            throw ParameterError("patch index " + std::to_string(i) + " outside the grid");
        }
        const auto p = feats.patch(i);
        for (std::size_t k = 0; k < feats.dim; ++k) {
            acc[k] += p[k];
        }
    }
    for (auto& v : acc) {
        v /= static_cast<double>(indices.size());
    }
    return acc;
}

inline std::vector<double> pool_all(const PatchFeatureMap& feats) {
    if (feats.patch_count() == 0) {
        throw ShapeError("pool_all on an empty feature map");
    }
    std::vector<std::size_t> all(feats.patch_count());
    for (std::size_t i = 0; i < all.size(); ++i) {
        all[i] = i;
    }
    return pool_topk_features(feats, all);
}

// Vector of the highest-scoring patch; ties go to the lowest index.
inline std::vector<double> pool_max(const PatchFeatureMap& feats, std::span<const double> patch_scores) {
    if (feats.patch_count() == 0 || patch_scores.size() != feats.patch_count()) {
        throw ShapeError("pool_max needs one score per patch");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < patch_scores.size(); ++i) {
        if (patch_scores[i] > patch_scores[best]) {
            best = i;
        }
    }
    const auto p = feats.patch(best);
    return {p.begin(), p.end()};
}

struct KMeansResult {
    std::vector<std::size_t> assignments;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> inertia_trace;  // after each assignment step
};

namespace detail {

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return acc;
}

// Nearest centroid, ties to the lowest centroid index.
inline std::size_t nearest_centroid(const std::vector<double>& p, const std::vector<std::vector<double>>& centroids,
                                    double& best) {
    std::size_t arg = 0;
    best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = sq_dist(p, centroids[c]);
        if (d < best) {
            best = d;
            arg = c;
        }
    }
    return arg;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iters is reached. Deterministic for a given seed.
inline KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t clusters, std::uint64_t seed,
                           std::size_t max_iters = 300) {
    if (points.empty()) {
        throw ParameterError("kmeans on an empty point set");
    }
    if (clusters < 1 || clusters > points.size()) {
        throw ParameterError("cluster count " + std::to_string(clusters) + " outside [1, " +
                             std::to_string(points.size()) + "]");
    }
    const std::size_t dim = points.front().size();
    for (const auto& p : points) {
        if (p.size() != dim) {
            throw ShapeError("kmeans points have inconsistent dimensions");
        }
        for (double v : p) {
            if (!std::isfinite(v)) {
                throw ShapeError("kmeans point contains a non-finite value");
            }
        }
    }
    const std::size_t n = points.size();

    // k-means++: first center uniform, then proportional to D^2.
    SplitMix64 rng(seed);
    KMeansResult r;
    r.centroids.push_back(points[rng.below(n)]);
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        d2[i] = detail::sq_dist(points[i], r.centroids[0]);
    }
    while (r.centroids.size() < clusters) {
        double total = 0.0;
        for (double v : d2) {
            total += v;
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            // All points coincide with a center; take the lowest index not yet used.
            pick = r.centroids.size() < n ? r.centroids.size() : 0;
        } else {
            const double target = rng.uniform() * total;
            double run = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                run += d2[i];
                if (run > target && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            while (d2[pick] <= 0.0 && pick > 0) {
                --pick;
            }
        }
        r.centroids.push_back(points[pick]);
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::sq_dist(points[i], r.centroids.back()));
        }
    }

    // Moves every nonempty cluster's centroid to the mean of its members.
    auto update_centroids = [&] {
        std::vector<std::vector<double>> sums(clusters, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(clusters, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = sums[r.assignments[i]];
            for (std::size_t k = 0; k < dim; ++k) {
                s[k] += points[i][k];
            }
            ++counts[r.assignments[i]];
        }
        for (std::size_t c = 0; c < clusters; ++c) {
            if (counts[c] > 0) {
                for (std::size_t k = 0; k < dim; ++k) {
                    r.centroids[c][k] = sums[c][k] / static_cast<double>(counts[c]);
                }
            }
        }
        return counts;
    };

    r.assignments.assign(n, clusters);
    std::vector<double> dist(n);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = detail::nearest_centroid(points[i], r.centroids, dist[i]);
            if (c != r.assignments[i]) {
                r.assignments[i] = c;
                changed = true;
            }
            inertia += dist[i];
        }
        r.inertia_trace.push_back(inertia);
        r.iterations = iter + 1;
        if (!changed) {
            break;
        }

        std::vector<std::size_t> counts = update_centroids();
        // Empty cluster: move it onto the point farthest from its own centroid.
        for (std::size_t c = 0; c < clusters; ++c) {
            if (counts[c] > 0) {
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[r.assignments[i]] <= 1) {
                    continue;
                }
                const double d = detail::sq_dist(points[i], r.centroids[r.assignments[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far_d < 0.0) {
                continue;
            }
            --counts[r.assignments[far]];
            r.centroids[c] = points[far];
            r.assignments[far] = c;
            counts[c] = 1;
        }
    }

    update_centroids();
    r.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.inertia += detail::sq_dist(points[i], r.centroids[r.assignments[i]]);
    }
    return r;
}

// Scales each point to unit L2 norm; zero vectors are left as is.
inline void l2_normalize_rows(std::vector<std::vector<double>>& points) {
    for (auto& p : points) {
        double sq = 0.0;
        for (double v : p) {
            sq += v * v;
        }
        if (sq > 0.0) {
            const double inv = 1.0 / std::sqrt(sq);
            for (double& v : p) {
                v *= inv;
            }
        }
    }
}

}  // namespace patchbank
