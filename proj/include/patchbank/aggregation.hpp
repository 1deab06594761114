#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "patchbank/error.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

// Scales every patch vector to unit L2 norm. Zero vectors are left as is.
inline void l2_normalize_patches(PatchFeatureMap& map) {
    for (std::size_t i = 0; i < map.patch_count(); ++i) {
        auto p = map.patch(i);
        double sq = 0.0;
        for (float v : p) {
            sq += static_cast<double>(v) * v;
        }
        if (sq > 0.0) {
            const double inv = 1.0 / std::sqrt(sq);
            for (float& v : p) {
                v = static_cast<float>(v * inv);
            }
        }
    }
}

// Element-wise mean of per-layer feature maps. Sums run in double in the
// given layer order and are cast to float once at the end.
inline PatchFeatureMap aggregate_layers(std::span<const PatchFeatureMap> layers, bool l2_normalize_layers = false) {
    if (layers.empty()) {
        throw ShapeError("aggregate_layers needs at least one layer");
    }
    const auto& first = layers.front();
    for (const auto& layer : layers) {
        if (layer.grid != first.grid || layer.dim != first.dim) {
            throw ShapeError("layer shape mismatch: " + to_string(layer.grid) + "x" + std::to_string(layer.dim) +
                             " vs " + to_string(first.grid) + "x" + std::to_string(first.dim));
        }
        layer.validate();
    }

    std::vector<double> acc(first.values.size(), 0.0);
    for (const auto& layer : layers) {
        if (l2_normalize_layers) {
            PatchFeatureMap normed = layer;
            l2_normalize_patches(normed);
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += normed.values[i];
            }
        } else {
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += layer.values[i];
            }
        }
    }

    PatchFeatureMap out(first.grid, first.dim);
    const double count = static_cast<double>(layers.size());
    for (std::size_t i = 0; i < acc.size(); ++i) {
        out.values[i] = static_cast<float>(acc[i] / count);
    }
    return out;
}

}  // namespace patchbank
