#pragma once

// Back patch masking: smooth the CLS attention grid with an n x n box
// filter, threshold it, and drop the patches that fall below the threshold.

#include <algorithm>
#include <cstddef>
#include <string>
#include <string_view>

#include "patchbank/error.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

enum class BorderMode {
    Zero,    // out-of-range taps contribute 0, divisor stays n*n
    Renorm,  // divide by the number of in-range taps
};

inline BorderMode parse_border_mode(std::string_view s) {
    if (s == "zero") {
        return BorderMode::Zero;
    }
    if (s == "renorm") {
        return BorderMode::Renorm;
    }
    throw ParameterError("unknown border mode '" + std::string(s) + "' (expected zero or renorm)");
}

inline std::string_view to_string(BorderMode m) {
    return m == BorderMode::Zero ? "zero" : "renorm";
}

struct BpmParams {
    int kernel_size = 7;
    double lambda = 0.1;
    bool soft_mask = false;
    BorderMode border = BorderMode::Zero;

    void validate() const {
        if (kernel_size < 1 || kernel_size % 2 == 0) {
            throw ParameterError("kernel size must be an odd positive integer, got " + std::to_string(kernel_size));
        }
        if (!(lambda >= 0.0 && lambda <= 1.0)) {
            throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
        }
    }
};

inline AttentionMap smooth_attention(const AttentionMap& att, int n, BorderMode border = BorderMode::Zero) {
    att.validate();
    if (n < 1 || n % 2 == 0) {
        throw ParameterError("kernel size must be an odd positive integer, got " + std::to_string(n));
    }
    const auto h = static_cast<long>(att.grid.height);
    const auto w = static_cast<long>(att.grid.width);
    if (n > 2 * std::min(h, w) - 1) {
        throw ParameterError("kernel size " + std::to_string(n) + " too large for a " + to_string(att.grid) + " grid");
    }
    const long r = (n - 1) / 2;
    const double full = static_cast<double>(n) * n;

    AttentionMap out;
    out.grid = att.grid;
    out.values.resize(att.values.size());
    for (long i = 0; i < h; ++i) {
        for (long j = 0; j < w; ++j) {
            double sum = 0.0;
            long taps = 0;
            for (long a = std::max(-r, -i); a <= std::min(r, h - 1 - i); ++a) {
                for (long b = std::max(-r, -j); b <= std::min(r, w - 1 - j); ++b) {
                    sum += att.values[static_cast<std::size_t>((i + a) * w + j + b)];
                    ++taps;
                }
            }
            const double denom = border == BorderMode::Zero ? full : static_cast<double>(taps);
            out.values[static_cast<std::size_t>(i * w + j)] = static_cast<float>(sum / denom);
        }
    }
    return out;
}

// bit = 1 iff value >= lambda.
inline BinaryMask binarize(const AttentionMap& att, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ParameterError("lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
    BinaryMask mask{att.grid, std::vector<std::uint8_t>(att.values.size())};
    for (std::size_t i = 0; i < att.values.size(); ++i) {
        mask.bits[i] = static_cast<double>(att.values[i]) >= lambda ? 1 : 0;
    }
    return mask;
}

// Keeps the patches whose mask bit is set. An empty mask keeps everything
// and raises the fallback flag so that detection is never silenced.
inline MaskedPatchSet apply_mask(const PatchFeatureMap& feats, const BinaryMask& mask) {
    if (feats.grid != mask.grid || mask.bits.size() != mask.grid.cells()) {
        throw ShapeError("mask grid " + to_string(mask.grid) + " does not match feature grid " + to_string(feats.grid));
    }
    MaskedPatchSet out;
    out.grid = feats.grid;
    out.dim = feats.dim;
    const bool empty = mask.popcount() == 0;
    out.fallback = empty;
    for (std::size_t i = 0; i < feats.patch_count(); ++i) {
        if (empty || mask.bits[i] != 0) {
            const auto p = feats.patch(i);
            out.vectors.insert(out.vectors.end(), p.begin(), p.end());
            out.indices.push_back(i);
        }
    }
    return out;
}

// Soft masking ablation: every patch is kept, scaled by its attention weight
// clamped to [0, 1].
inline MaskedPatchSet apply_soft_mask(const PatchFeatureMap& feats, const AttentionMap& weights) {
    if (feats.grid != weights.grid) {
        throw ShapeError("attention grid " + to_string(weights.grid) + " does not match feature grid " +
                         to_string(feats.grid));
    }
    MaskedPatchSet out;
    out.grid = feats.grid;
    out.dim = feats.dim;
    out.vectors.reserve(feats.values.size());
    for (std::size_t i = 0; i < feats.patch_count(); ++i) {
        const float wgt = std::clamp(weights.values[i], 0.0f, 1.0f);
        for (float v : feats.patch(i)) {
            out.vectors.push_back(v * wgt);
        }
        out.indices.push_back(i);
    }
    return out;
}

// Full masking step for one image. Hard masking smooths then binarizes;
// soft masking weights each patch by its raw attention score.
inline MaskedPatchSet mask_patches(const PatchFeatureMap& feats, const AttentionMap& att, const BpmParams& params) {
    params.validate();
    if (feats.grid != att.grid) {
        throw ShapeError("attention grid " + to_string(att.grid) + " does not match feature grid " +
                         to_string(feats.grid));
    }
    if (params.soft_mask) {
        return apply_soft_mask(feats, att);
    }
    const AttentionMap smoothed = smooth_attention(att, params.kernel_size, params.border);
    return apply_mask(feats, binarize(smoothed, params.lambda));
}

}  // namespace patchbank
