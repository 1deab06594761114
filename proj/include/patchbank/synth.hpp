#pragma once

// Seeded synthetic datasets with known ground truth.
//
// Normal patches are Gaussian draws around a foreground or background
// centroid. The foreground is a centered rectangle with high attention;
// everything else is background with low attention. Anomalous images are
// fresh normal draws with a compact blob of patches displaced along a
// type-specific direction (orthonormal, from a seeded rotation).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchbank/error.hpp"
#include "patchbank/manifest.hpp"
#include "patchbank/rng.hpp"
#include "patchbank/tensor_io.hpp"

namespace patchbank {

enum class AnomalyRegion { Foreground, Background };

struct SynthSpec {
    std::size_t n_normal_train = 50;
    std::size_t n_normal_test = 20;
    std::size_t n_anomalous_test = 20;
    std::size_t grid_h = 14;
    std::size_t grid_w = 14;
    std::size_t dim = 32;
    std::size_t n_layers = 8;
    std::size_t patch_size = 16;
    std::size_t n_anomaly_types = 3;
    double anomaly_patch_fraction = 0.15;
    double shift_magnitude = 10.0;
    double noise_scale = 1.0;
    double background_fraction = 0.8;
    AnomalyRegion anomaly_region = AnomalyRegion::Foreground;
    // Background cells eligible for background anomalies must be more than
    // this many cells (Chebyshev) away from the foreground.
    std::size_t background_margin = 3;
    double foreground_attention = 0.8;
    double background_attention = 0.02;
    double layer_noise = 0.05;
    std::uint64_t seed = 0;

    void validate() const {
        auto need = [](bool ok, const char* what) {
            if (!ok) {
                throw ParameterError(std::string("synth spec: ") + what);
            }
        };
        need(n_normal_train >= 1, "n_normal_train must be >= 1");
        need(n_normal_test + n_anomalous_test >= 1, "test set must not be empty");
        need(grid_h >= 1 && grid_w >= 1 && dim >= 1 && n_layers >= 1 && patch_size >= 1, "geometry must be >= 1");
        need(n_anomaly_types >= 1 && n_anomaly_types <= dim, "n_anomaly_types must lie in [1, dim]");
        need(anomaly_patch_fraction > 0.0 && anomaly_patch_fraction < 1.0, "anomaly_patch_fraction must lie in (0, 1)");
        need(background_fraction > 0.0 && background_fraction < 1.0, "background_fraction must lie in (0, 1)");
        need(shift_magnitude >= 0.0, "shift_magnitude must be >= 0");
        need(noise_scale > 0.0, "noise_scale must be > 0");
        need(layer_noise >= 0.0, "layer_noise must be >= 0");
        need(foreground_attention >= 0.0 && background_attention >= 0.0, "attention levels must be >= 0");
    }
};

inline SynthSpec synth_spec_from_json(const nlohmann::json& doc) {
    SynthSpec s;
    if (!doc.is_object()) {
        throw FormatError("synth spec must be a JSON object");
    }
    static const std::set<std::string> known{
        "n_normal_train", "n_normal_test",        "n_anomalous_test",     "grid_h",
        "grid_w",         "dim",                  "n_layers",             "patch_size",
        "n_anomaly_types", "anomaly_patch_fraction", "shift_magnitude",   "noise_scale",
        "background_fraction", "anomaly_region",  "background_margin",    "foreground_attention",
        "background_attention", "layer_noise",    "seed"};
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) {
            throw ParameterError("synth spec: unknown key '" + key + "'");
        }
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (doc.contains(key)) {
                field = doc.at(key).get<std::decay_t<decltype(field)>>();
            }
        };
        get("n_normal_train", s.n_normal_train);
        get("n_normal_test", s.n_normal_test);
        get("n_anomalous_test", s.n_anomalous_test);
        get("grid_h", s.grid_h);
        get("grid_w", s.grid_w);
        get("dim", s.dim);
        get("n_layers", s.n_layers);
        get("patch_size", s.patch_size);
        get("n_anomaly_types", s.n_anomaly_types);
        get("anomaly_patch_fraction", s.anomaly_patch_fraction);
        get("shift_magnitude", s.shift_magnitude);
        get("noise_scale", s.noise_scale);
        get("background_fraction", s.background_fraction);
        get("background_margin", s.background_margin);
        get("foreground_attention", s.foreground_attention);
        get("background_attention", s.background_attention);
        get("layer_noise", s.layer_noise);
        get("seed", s.seed);
        if (doc.contains("anomaly_region")) {
            const auto r = doc.at("anomaly_region").get<std::string>();
            if (r == "foreground") {
                s.anomaly_region = AnomalyRegion::Foreground;
            } else if (r == "background") {
                s.anomaly_region = AnomalyRegion::Background;
            } else {
                throw ParameterError("synth spec: anomaly_region must be foreground or background");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline nlohmann::ordered_json synth_spec_to_json(const SynthSpec& s) {
    nlohmann::ordered_json doc;
    doc["n_normal_train"] = s.n_normal_train;
    doc["n_normal_test"] = s.n_normal_test;
    doc["n_anomalous_test"] = s.n_anomalous_test;
    doc["grid_h"] = s.grid_h;
    doc["grid_w"] = s.grid_w;
    doc["dim"] = s.dim;
    doc["n_layers"] = s.n_layers;
    doc["patch_size"] = s.patch_size;
    doc["n_anomaly_types"] = s.n_anomaly_types;
    doc["anomaly_patch_fraction"] = s.anomaly_patch_fraction;
    doc["shift_magnitude"] = s.shift_magnitude;
    doc["noise_scale"] = s.noise_scale;
    doc["background_fraction"] = s.background_fraction;
    doc["anomaly_region"] = s.anomaly_region == AnomalyRegion::Foreground ? "foreground" : "background";
    doc["background_margin"] = s.background_margin;
    doc["foreground_attention"] = s.foreground_attention;
    doc["background_attention"] = s.background_attention;
    doc["layer_noise"] = s.layer_noise;
    doc["seed"] = s.seed;
    return doc;
}

struct SynthLayout {
    GridShape grid;
    std::vector<std::uint8_t> foreground;          // per cell
    std::vector<std::size_t> anomaly_candidates;   // cells anomalies may occupy
};

inline SynthLayout synth_layout(const SynthSpec& spec) {
    SynthLayout lay;
    lay.grid = {spec.grid_h, spec.grid_w};
    const double keep = std::sqrt(1.0 - spec.background_fraction);
    const auto fh = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.grid_h * keep)), 1, spec.grid_h);
    const auto fw = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.grid_w * keep)), 1, spec.grid_w);
    const std::size_t r0 = (spec.grid_h - fh) / 2;
    const std::size_t c0 = (spec.grid_w - fw) / 2;
    lay.foreground.assign(lay.grid.cells(), 0);
    for (std::size_t r = r0; r < r0 + fh; ++r) {
        for (std::size_t c = c0; c < c0 + fw; ++c) {
            lay.foreground[r * spec.grid_w + c] = 1;
        }
    }
    for (std::size_t r = 0; r < spec.grid_h; ++r) {
        for (std::size_t c = 0; c < spec.grid_w; ++c) {
            const std::size_t cell = r * spec.grid_w + c;
            if (spec.anomaly_region == AnomalyRegion::Foreground) {
                if (lay.foreground[cell]) {
                    lay.anomaly_candidates.push_back(cell);
                }
                continue;
            }
            // Chebyshev distance from the foreground rectangle.
            const auto gap = [](std::size_t x, std::size_t lo, std::size_t hi) -> std::size_t {
                return x < lo ? lo - x : (x >= hi ? x - hi + 1 : 0);
            };
            const std::size_t d = std::max(gap(r, r0, r0 + fh), gap(c, c0, c0 + fw));
            if (d > spec.background_margin) {
                lay.anomaly_candidates.push_back(cell);
            }
        }
    }
    if (lay.anomaly_candidates.empty()) {
        throw ParameterError("synth spec leaves no cells for anomalies in the requested region");
    }
    return lay;
}

struct SynthOutput {
    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
    std::filesystem::path anomalous_manifest;  // anomalous test images only
};

namespace detail {

inline std::string numbered(const char* prefix, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
    return buf;
}

// Orthonormal directions from Gram-Schmidt over Gaussian vectors.
inline std::vector<std::vector<double>> random_orthonormal(std::size_t count, std::size_t dim, SplitMix64& rng) {
    std::vector<std::vector<double>> dirs;
    while (dirs.size() < count) {
        std::vector<double> v(dim);
        for (auto& x : v) {
            x = rng.normal();
        }
        for (const auto& d : dirs) {
            double proj = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                proj += v[k] * d[k];
            }
            for (std::size_t k = 0; k < dim; ++k) {
                v[k] -= proj * d[k];
            }
        }
        double norm = 0.0;
        for (double x : v) {
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-6) {
            continue;
        }
        for (auto& x : v) {
            x /= norm;
        }
        dirs.push_back(std::move(v));
    }
    return dirs;
}

}  // namespace detail

// Writes train/test manifests plus all tensors under out_dir.
inline SynthOutput generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    const SynthLayout layout = synth_layout(spec);
    const std::size_t cells = layout.grid.cells();
    const std::size_t dim = spec.dim;
    const std::size_t image_h = spec.grid_h * spec.patch_size;
    const std::size_t image_w = spec.grid_w * spec.patch_size;

    SplitMix64 rng(spec.seed);
    std::vector<double> fg_center(dim);
    std::vector<double> bg_center(dim);
    for (auto& v : fg_center) {
        v = rng.normal();
    }
    for (auto& v : bg_center) {
        v = rng.normal();
    }
    const auto directions = detail::random_orthonormal(spec.n_anomaly_types, dim, rng);

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "samples", ec);
    if (ec) {
        throw IoError("cannot create " + (out_dir / "samples").string() + ": " + ec.message());
    }

    auto draw_normal = [&] {
        std::vector<double> feats(cells * dim);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const auto& center = layout.foreground[cell] ? fg_center : bg_center;
            for (std::size_t k = 0; k < dim; ++k) {
                feats[cell * dim + k] = center[k] + spec.noise_scale * rng.normal();
            }
        }
        return feats;
    };
    auto draw_attention = [&] {
        std::vector<float> att(cells);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const double base = layout.foreground[cell] ? spec.foreground_attention : spec.background_attention;
            const double jitter = layout.foreground[cell] ? 0.05 : 0.01;
            att[cell] = static_cast<float>(std::max(0.0, base + rng.uniform(-jitter, jitter)));
        }
        return att;
    };

    DatasetManifest train;
    DatasetManifest test;
    for (auto* m : {&train, &test}) {
        m->grid_h = spec.grid_h;
        m->grid_w = spec.grid_w;
        m->feature_dim = dim;
        m->image_h = image_h;
        m->image_w = image_w;
        for (std::size_t l = 0; l < spec.n_layers; ++l) {
            m->layers.push_back(static_cast<int>(l));
        }
    }

    // Writes per-layer tensors whose mean is the target map, plus attention
    // and (optionally) a pixel mask; returns the manifest entry.
    auto emit = [&](const std::string& id, const std::vector<double>& target, const std::vector<float>& att,
                    const std::vector<std::uint8_t>* anomalous_cells) {
        const std::filesystem::path rel = std::filesystem::path("samples") / id;
        std::filesystem::create_directories(out_dir / rel);
        Sample s;
        s.id = id;
        std::vector<double> noise_sum(target.size(), 0.0);
        for (std::size_t l = 0; l < spec.n_layers; ++l) {
            std::vector<float> layer(target.size());
            for (std::size_t i = 0; i < target.size(); ++i) {
                double n = 0.0;
                if (l + 1 < spec.n_layers) {
                    n = spec.layer_noise * rng.normal();
                    noise_sum[i] += n;
                } else {
                    n = -noise_sum[i];
                }
                layer[i] = static_cast<float>(target[i] + n);
            }
            char name[32];
            std::snprintf(name, sizeof name, "layer_%02zu.uft1", l);
            write_tensor(out_dir / rel / name, Tensor({cells, dim}, std::move(layer)));
            s.feature_paths.push_back(rel / name);
        }
        write_tensor(out_dir / rel / "attention.uft1", Tensor({spec.grid_h, spec.grid_w}, att));
        s.attention_path = rel / "attention.uft1";
        if (anomalous_cells != nullptr) {
            std::vector<float> mask(image_h * image_w, 0.0f);
            for (std::size_t cell = 0; cell < cells; ++cell) {
                if (!(*anomalous_cells)[cell]) {
                    continue;
                }
                const std::size_t r = cell / spec.grid_w;
                const std::size_t c = cell % spec.grid_w;
                for (std::size_t y = r * spec.patch_size; y < (r + 1) * spec.patch_size; ++y) {
                    for (std::size_t x = c * spec.patch_size; x < (c + 1) * spec.patch_size; ++x) {
                        mask[y * image_w + x] = 1.0f;
                    }
                }
            }
            write_tensor(out_dir / rel / "mask.uft1", Tensor({image_h, image_w}, std::move(mask)));
            s.pixel_mask_path = rel / "mask.uft1";
        }
        return s;
    };

    for (std::size_t i = 0; i < spec.n_normal_train; ++i) {
        const auto feats = draw_normal();
        const auto att = draw_attention();
        train.samples.push_back(emit(detail::numbered("train", i), feats, att, nullptr));
    }

    const std::size_t blob = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(spec.anomaly_patch_fraction *
                                                static_cast<double>(layout.anomaly_candidates.size()))));
    const std::vector<std::uint8_t> no_anomaly(cells, 0);
    for (std::size_t i = 0; i < spec.n_normal_test; ++i) {
        const auto feats = draw_normal();
        const auto att = draw_attention();
        Sample s = emit(detail::numbered("test_normal", i), feats, att, &no_anomaly);
        s.label = 0;
        test.samples.push_back(std::move(s));
    }
    DatasetManifest anomalous = test;
    anomalous.samples.clear();
    for (std::size_t i = 0; i < spec.n_anomalous_test; ++i) {
        const std::size_t type = i % spec.n_anomaly_types;
        auto feats = draw_normal();
        const auto att = draw_attention();

        // Compact blob: candidates nearest to a random candidate cell.
        const auto& cand = layout.anomaly_candidates;
        const std::size_t seed_cell = cand[rng.below(cand.size())];
        const auto sr = static_cast<long>(seed_cell / spec.grid_w);
        const auto sc = static_cast<long>(seed_cell % spec.grid_w);
        std::vector<std::pair<long, std::size_t>> ranked;
        for (auto cell : cand) {
            const long dr = static_cast<long>(cell / spec.grid_w) - sr;
            const long dc = static_cast<long>(cell % spec.grid_w) - sc;
            ranked.emplace_back(dr * dr + dc * dc, cell);
        }
        std::sort(ranked.begin(), ranked.end());
        std::vector<std::uint8_t> hit(cells, 0);
        for (std::size_t j = 0; j < std::min(blob, ranked.size()); ++j) {
            const std::size_t cell = ranked[j].second;
            hit[cell] = 1;
            for (std::size_t k = 0; k < dim; ++k) {
                feats[cell * dim + k] += spec.shift_magnitude * directions[type][k];
            }
        }
        Sample s = emit(detail::numbered("test_anomalous", i), feats, att, &hit);
        s.label = 1;
        s.anomaly_type = "type_" + std::to_string(type);
        anomalous.samples.push_back(s);
        test.samples.push_back(std::move(s));
    }

    SynthOutput out{out_dir / "train.json", out_dir / "test.json", out_dir / "test_anomalous.json"};
    write_manifest(out.train_manifest, train);
    write_manifest(out.test_manifest, test);
    write_manifest(out.anomalous_manifest, anomalous);
    std::ofstream spec_out(out_dir / "spec.json", std::ios::trunc);
    spec_out << synth_spec_to_json(spec).dump(2) << '\n';
    return out;
}

}  // namespace patchbank
