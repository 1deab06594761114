#pragma once

#include "patchbank/aggregation.hpp"
#include "patchbank/bpm.hpp"
#include "patchbank/manifest.hpp"

namespace patchbank {

// Per-image front end shared by training and testing: layer aggregation
// followed by back patch masking.
struct ProcessedImage {
    PatchFeatureMap features;  // aggregated, unmasked
    MaskedPatchSet masked;
};

struct FeatureOptions {
    BpmParams bpm;
    bool l2_normalize_layers = false;
};

inline ProcessedImage process_image(std::span<const PatchFeatureMap> layers, const AttentionMap& attention,
                                    const FeatureOptions& opts) {
    ProcessedImage out;
    out.features = aggregate_layers(layers, opts.l2_normalize_layers);
    out.masked = mask_patches(out.features, attention, opts.bpm);
    return out;
}

inline ProcessedImage process_sample(const DatasetManifest& m, const Sample& s, const FeatureOptions& opts) {
    const auto layers = load_sample_layers(m, s);
    return process_image(layers, load_sample_attention(m, s), opts);
}

}  // namespace patchbank
