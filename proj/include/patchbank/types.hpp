#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "patchbank/error.hpp"

namespace patchbank {

struct GridShape {
    std::size_t height = 0;
    std::size_t width = 0;

    std::size_t cells() const { return height * width; }
    friend bool operator==(const GridShape&, const GridShape&) = default;
};

inline std::string to_string(const GridShape& g) {
    return std::to_string(g.height) + "x" + std::to_string(g.width);
}

// ceil(x) that absorbs binary rounding noise, so 0.07 * 100 maps to 7.
inline std::size_t rounded_ceil(double x) {
    const double nearest = std::round(x);
    if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, std::abs(x))) {
        return static_cast<std::size_t>(nearest);
    }
    return static_cast<std::size_t>(std::ceil(x));
}

// Read-only row-major view over a rows x cols block of floats.
struct MatrixView {
    const float* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(const float* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
    MatrixView(std::span<const float> values, std::size_t c)
        : data(values.data()), rows(c == 0 ? 0 : values.size() / c), cols(c) {}

    std::span<const float> row(std::size_t i) const { return {data + i * cols, cols}; }
};

// Per-image grid of D-dimensional patch embeddings, row-major over the grid.
struct PatchFeatureMap {
    GridShape grid;
    std::size_t dim = 0;
    std::vector<float> values;  // cells() x dim

    PatchFeatureMap() = default;
    PatchFeatureMap(GridShape g, std::size_t d) : grid(g), dim(d), values(g.cells() * d, 0.0f) {}
    PatchFeatureMap(GridShape g, std::size_t d, std::vector<float> v) : grid(g), dim(d), values(std::move(v)) {
        validate();
    }

    std::size_t patch_count() const { return grid.cells(); }

    std::span<const float> patch(std::size_t i) const { return {values.data() + i * dim, dim}; }
    std::span<float> patch(std::size_t i) { return {values.data() + i * dim, dim}; }

    void validate() const {
        if (grid.cells() == 0 || dim == 0) {
            throw ShapeError("feature map must have a nonempty grid and dim >= 1");
        }
        if (values.size() != grid.cells() * dim) {
            throw ShapeError("feature map holds " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(grid.cells() * dim));
        }
        for (float v : values) {
            if (!std::isfinite(v)) {
                throw ShapeError("feature map contains a non-finite value");
            }
        }
    }

    friend bool operator==(const PatchFeatureMap&, const PatchFeatureMap&) = default;
};

// Nonnegative attention score per grid cell (CLS self-attention, head-averaged).
struct AttentionMap {
    GridShape grid;
    std::vector<float> values;

    AttentionMap() = default;
    AttentionMap(GridShape g, std::vector<float> v) : grid(g), values(std::move(v)) { validate(); }

    float at(std::size_t r, std::size_t c) const { return values[r * grid.width + c]; }

    void validate() const {
        if (values.size() != grid.cells() || grid.cells() == 0) {
            throw ShapeError("attention map size does not match its " + to_string(grid) + " grid");
        }
        for (float v : values) {
            if (!std::isfinite(v) || v < 0.0f) {
                throw ShapeError("attention values must be finite and nonnegative");
            }
        }
    }
};

struct BinaryMask {
    GridShape grid;
    std::vector<std::uint8_t> bits;

    std::size_t popcount() const {
        std::size_t n = 0;
        for (auto b : bits) {
            n += b;
        }
        return n;
    }
    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// Patch vectors that survived masking, each tagged with its grid index.
struct MaskedPatchSet {
    GridShape grid;
    std::size_t dim = 0;
    std::vector<float> vectors;       // size() x dim
    std::vector<std::size_t> indices;  // original grid index per row
    bool fallback = false;            // mask was empty and every patch was kept

    std::size_t size() const { return indices.size(); }
    std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
    MatrixView view() const { return {vectors.data(), size(), dim}; }
};

}  // namespace patchbank
