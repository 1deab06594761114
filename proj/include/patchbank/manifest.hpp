#pragma once

// Dataset manifest: JSON document listing per-sample feature tensors,
// attention grids, and optional labels / pixel masks / anomaly types.
// All paths inside the document are relative to the manifest's directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchbank/error.hpp"
#include "patchbank/tensor_io.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

struct Sample {
    std::string id;
    std::vector<std::filesystem::path> feature_paths;
    std::filesystem::path attention_path;
    std::optional<int> label;
    std::optional<std::filesystem::path> pixel_mask_path;
    std::optional<std::string> anomaly_type;

    bool is_normal() const { return !label || *label == 0; }
};

struct DatasetManifest {
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
    std::size_t feature_dim = 0;
    std::size_t image_h = 0;
    std::size_t image_w = 0;
    std::vector<int> layers;  // optional layer indices, informational
    std::vector<Sample> samples;
    std::filesystem::path base_dir;

    GridShape grid() const { return {grid_h, grid_w}; }

    const Sample& find(const std::string& id) const {
        for (const auto& s : samples) {
            if (s.id == id) {
                return s;
            }
        }
        throw FormatError("sample '" + id + "' not found in manifest");
    }

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : base_dir / p;
    }
};

namespace detail {

inline std::size_t require_positive(const nlohmann::json& doc, const char* key) {
    if (!doc.contains(key) || !doc[key].is_number_integer() || doc[key].get<long long>() < 1) {
        throw FormatError(std::string("manifest: '") + key + "' must be a positive integer");
    }
    return doc[key].get<std::size_t>();
}

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_string()) {
        throw FormatError("manifest: " + where + " needs string '" + key + "'");
    }
    return obj[key].get<std::string>();
}

}  // namespace detail

// Reads a feature tensor and normalizes [N, D] / [gh, gw, D] to a flat map.
inline PatchFeatureMap read_feature_tensor(const std::filesystem::path& path, GridShape grid, std::size_t dim) {
    Tensor t = read_tensor(path);
    const bool flat = t.dims.size() == 2 && t.dims[0] == grid.cells() && t.dims[1] == dim;
    const bool gridded = t.dims.size() == 3 && t.dims[0] == grid.height && t.dims[1] == grid.width && t.dims[2] == dim;
    if (!flat && !gridded) {
        std::string shape;
        for (auto d : t.dims) {
            shape += (shape.empty() ? "" : ",") + std::to_string(d);
        }
        throw ShapeError(path.string() + ": feature tensor shape [" + shape + "] does not match grid " +
                         to_string(grid) + " with dim " + std::to_string(dim));
    }
    return PatchFeatureMap(grid, dim, std::move(t.data));
}

inline AttentionMap read_attention_tensor(const std::filesystem::path& path, GridShape grid) {
    Tensor t = read_tensor(path);
    if (t.dims.size() != 2 || t.dims[0] != grid.height || t.dims[1] != grid.width) {
        throw ShapeError(path.string() + ": attention tensor must have shape [" + std::to_string(grid.height) + "," +
                         std::to_string(grid.width) + "]");
    }
    try {
        return AttentionMap(grid, std::move(t.data));
    } catch (const ShapeError& e) {
        throw ShapeError(path.string() + ": " + e.what());
    }
}

// Ground-truth pixel mask of shape [image_h, image_w] with 0/1 entries.
inline std::vector<std::uint8_t> read_pixel_mask(const std::filesystem::path& path, std::size_t image_h,
                                                 std::size_t image_w) {
    Tensor t = read_tensor(path);
    if (t.dims.size() != 2 || t.dims[0] != image_h || t.dims[1] != image_w) {
        throw ShapeError(path.string() + ": pixel mask must have shape [" + std::to_string(image_h) + "," +
                         std::to_string(image_w) + "]");
    }
    std::vector<std::uint8_t> bits(t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        if (t.data[i] == 0.0f) {
            bits[i] = 0;
        } else if (t.data[i] == 1.0f) {
            bits[i] = 1;
        } else {
            throw FormatError(path.string() + ": pixel mask is not binary");
        }
    }
    return bits;
}

inline std::vector<PatchFeatureMap> load_sample_layers(const DatasetManifest& m, const Sample& s) {
    std::vector<PatchFeatureMap> layers;
    layers.reserve(s.feature_paths.size());
    for (const auto& p : s.feature_paths) {
        layers.push_back(read_feature_tensor(m.resolve(p), m.grid(), m.feature_dim));
    }
    return layers;
}

inline AttentionMap load_sample_attention(const DatasetManifest& m, const Sample& s) {
    return read_attention_tensor(m.resolve(s.attention_path), m.grid());
}

// Verifies that every referenced tensor exists and has the declared shape.
inline void check_manifest_files(const DatasetManifest& m) {
    for (const auto& s : m.samples) {
        for (const auto& p : s.feature_paths) {
            if (!std::filesystem::exists(m.resolve(p))) {
                throw IoError("missing feature file: " + m.resolve(p).string());
            }
        }
        if (!std::filesystem::exists(m.resolve(s.attention_path))) {
            throw IoError("missing attention file: " + m.resolve(s.attention_path).string());
        }
        load_sample_layers(m, s);
        load_sample_attention(m, s);
        if (s.pixel_mask_path) {
            read_pixel_mask(m.resolve(*s.pixel_mask_path), m.image_h, m.image_w);
        }
    }
}

inline DatasetManifest parse_manifest(const nlohmann::json& doc, std::filesystem::path base_dir) {
    if (!doc.is_object()) {
        throw FormatError("manifest: top level must be an object");
    }
    DatasetManifest m;
    m.base_dir = std::move(base_dir);
    m.grid_h = detail::require_positive(doc, "grid_h");
    m.grid_w = detail::require_positive(doc, "grid_w");
    m.feature_dim = detail::require_positive(doc, "feature_dim");
    m.image_h = detail::require_positive(doc, "image_h");
    m.image_w = detail::require_positive(doc, "image_w");
    if (doc.contains("layers")) {
        if (!doc["layers"].is_array()) {
            throw FormatError("manifest: 'layers' must be an array of integers");
        }
        for (const auto& l : doc["layers"]) {
            if (!l.is_number_integer()) {
                throw FormatError("manifest: 'layers' must be an array of integers");
            }
            m.layers.push_back(l.get<int>());
        }
    }
    if (!doc.contains("samples") || !doc["samples"].is_array()) {
        throw FormatError("manifest: 'samples' must be an array");
    }

    std::set<std::string> seen;
    std::size_t index = 0;
    for (const auto& obj : doc["samples"]) {
        const std::string where = "sample #" + std::to_string(index++);
        if (!obj.is_object()) {
            throw FormatError("manifest: " + where + " must be an object");
        }
        Sample s;
        s.id = detail::require_string(obj, "id", where);
        if (s.id.empty() || s.id.find('/') != std::string::npos || s.id.find('\\') != std::string::npos) {
            throw FormatError("manifest: invalid sample id '" + s.id + "'");
        }
        if (!seen.insert(s.id).second) {
            throw FormatError("manifest: duplicate sample id '" + s.id + "'");
        }
        if (!obj.contains("feature_paths") || !obj["feature_paths"].is_array() || obj["feature_paths"].empty()) {
            throw FormatError("manifest: " + where + " needs a nonempty 'feature_paths' array");
        }
        for (const auto& p : obj["feature_paths"]) {
            if (!p.is_string()) {
                throw FormatError("manifest: " + where + " feature path must be a string");
            }
            s.feature_paths.emplace_back(p.get<std::string>());
        }
        s.attention_path = detail::require_string(obj, "attention_path", where);
        if (obj.contains("label") && !obj["label"].is_null()) {
            if (!obj["label"].is_number_integer() || (obj["label"] != 0 && obj["label"] != 1)) {
                throw FormatError("manifest: " + where + " label must be 0 or 1");
            }
            s.label = obj["label"].get<int>();
        }
        if (obj.contains("pixel_mask_path") && !obj["pixel_mask_path"].is_null()) {
            s.pixel_mask_path = detail::require_string(obj, "pixel_mask_path", where);
        }
        if (obj.contains("anomaly_type") && !obj["anomaly_type"].is_null()) {
            s.anomaly_type = detail::require_string(obj, "anomaly_type", where);
        }
        m.samples.push_back(std::move(s));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, bool strict = false) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest: " + path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m = parse_manifest(doc, path.parent_path());
    if (strict) {
        check_manifest_files(m);
    }
    return m;
}

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest& m) {
    nlohmann::ordered_json doc;
    doc["grid_h"] = m.grid_h;
    doc["grid_w"] = m.grid_w;
    doc["feature_dim"] = m.feature_dim;
    doc["image_h"] = m.image_h;
    doc["image_w"] = m.image_w;
    if (!m.layers.empty()) {
        doc["layers"] = m.layers;
    }
    doc["samples"] = nlohmann::ordered_json::array();
    for (const auto& s : m.samples) {
        nlohmann::ordered_json obj;
        obj["id"] = s.id;
        obj["feature_paths"] = nlohmann::ordered_json::array();
        for (const auto& p : s.feature_paths) {
            obj["feature_paths"].push_back(p.generic_string());
        }
        obj["attention_path"] = s.attention_path.generic_string();
        if (s.label) {
            obj["label"] = *s.label;
        }
        if (s.pixel_mask_path) {
            obj["pixel_mask_path"] = s.pixel_mask_path->generic_string();
        }
        if (s.anomaly_type) {
            obj["anomaly_type"] = *s.anomaly_type;
        }
        doc["samples"].push_back(std::move(obj));
    }
    return doc;
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << manifest_to_json(m).dump(2) << '\n';
}

}  // namespace patchbank
