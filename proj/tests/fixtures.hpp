#pragma once

// Small on-disk datasets for manifest and pipeline tests.

#include <random>
#include <string>

#include "patchbank/manifest.hpp"
#include "test_util.hpp"

namespace testutil {

struct TinySample {
    std::string id;
    std::vector<std::vector<float>> layers;  // each cells x dim
    std::vector<float> attention;             // cells
    std::optional<int> label;
};

inline patchbank::DatasetManifest write_dataset(const std::filesystem::path& dir, patchbank::GridShape grid,
                                                std::size_t dim, const std::vector<TinySample>& samples) {
    using namespace patchbank;
    DatasetManifest m;
    m.grid_h = grid.height;
    m.grid_w = grid.width;
    m.feature_dim = dim;
    m.image_h = grid.height * 4;
    m.image_w = grid.width * 4;
    m.base_dir = dir;
    for (const auto& s : samples) {
        Sample out;
        out.id = s.id;
        for (std::size_t l = 0; l < s.layers.size(); ++l) {
            const std::string rel = s.id + "_l" + std::to_string(l) + ".uft1";
            write_tensor(dir / rel, Tensor({grid.cells(), dim}, s.layers[l]));
            out.feature_paths.push_back(rel);
        }
        out.attention_path = s.id + "_att.uft1";
        write_tensor(dir / out.attention_path, Tensor({grid.height, grid.width}, s.attention));
        out.label = s.label;
        m.samples.push_back(out);
    }
    write_manifest(dir / "manifest.json", m);
    return m;
}

// Random sample: full attention, gaussian features.
inline TinySample random_sample(std::mt19937_64& gen, const std::string& id, patchbank::GridShape grid,
                                std::size_t dim, std::size_t layers, std::optional<int> label = 0) {
    TinySample s{id, {}, std::vector<float>(grid.cells(), 0.8f), label};
    for (std::size_t l = 0; l < layers; ++l) {
        s.layers.push_back(random_matrix(gen, grid.cells(), dim));
    }
    return s;
}

}  // namespace testutil
