#pragma once

// Normal patch memory bank: build from a manifest, coreset-subsample,
// persist as a `.uftb` directory (vectors.uft1 + meta.json), and merge.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchbank/coreset.hpp"
#include "patchbank/error.hpp"
#include "patchbank/parallel.hpp"
#include "patchbank/preprocess.hpp"
#include "patchbank/search.hpp"
#include "patchbank/tensor_io.hpp"

namespace patchbank {

inline constexpr const char* kBankFormatName = "patchbank-bank";
inline constexpr int kBankFormatVersion = 1;

struct BankMeta {
    std::vector<std::string> source_sample_ids;
    double coreset_ratio = 1.0;
    double lambda = 0.1;
    int kernel_size = 7;
    bool soft_mask = false;
    BorderMode border = BorderMode::Zero;
    bool l2_normalize_layers = false;
    std::vector<int> layer_set;
    std::uint64_t creation_seed = 0;
    std::size_t candidate_count = 0;  // patches before subsampling

    FeatureOptions feature_options() const {
        FeatureOptions opts;
        opts.bpm.kernel_size = kernel_size;
        opts.bpm.lambda = lambda;
        opts.bpm.soft_mask = soft_mask;
        opts.bpm.border = border;
        opts.l2_normalize_layers = l2_normalize_layers;
        return opts;
    }

    friend bool operator==(const BankMeta&, const BankMeta&) = default;
};

// Immutable once constructed.
class MemoryBank {
public:
    MemoryBank(std::size_t dim, std::vector<float> vectors, BankMeta meta)
        : dim_(dim), vectors_(std::move(vectors)), meta_(std::move(meta)) {
        if (dim_ == 0 || vectors_.empty() || vectors_.size() % dim_ != 0) {
            throw ShapeError("memory bank needs at least one vector of dim >= 1");
        }
        for (float v : vectors_) {
            if (!std::isfinite(v)) {
                throw ShapeError("memory bank contains a non-finite value");
            }
        }
        norms_ = row_squared_norms(view());
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return vectors_.size() / dim_; }
    const std::vector<float>& vectors() const { return vectors_; }
    const BankMeta& meta() const { return meta_; }
    MatrixView view() const { return {vectors_.data(), size(), dim_}; }
    std::span<const float> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }
    std::span<const double> squared_norms() const { return norms_; }

    friend bool operator==(const MemoryBank& a, const MemoryBank& b) {
        return a.dim_ == b.dim_ && a.vectors_ == b.vectors_ && a.meta_ == b.meta_;
    }

private:
    std::size_t dim_;
    std::vector<float> vectors_;
    BankMeta meta_;
    std::vector<double> norms_;
};

struct BuildOptions {
    FeatureOptions features;
    double coreset_ratio = 0.01;
    std::uint64_t seed = 0;
};

// Subsamples a candidate matrix down to ceil(ratio * rows) rows.
inline std::vector<float> subsample_rows(MatrixView candidates, double ratio, std::uint64_t seed) {
    const std::size_t target = coreset_target(candidates.rows, ratio);
    if (target == candidates.rows) {
        return {candidates.data, candidates.data + candidates.rows * candidates.cols};
    }
    const auto picked = coreset_subsample(candidates, target, seed);
    std::vector<float> out;
    out.reserve(target * candidates.cols);
    for (auto i : picked) {
        const auto r = candidates.row(i);
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

inline MemoryBank build_bank(const DatasetManifest& manifest, const BuildOptions& opts) {
    opts.features.bpm.validate();
    coreset_target(1, opts.coreset_ratio);

    std::vector<const Sample*> train;
    for (const auto& s : manifest.samples) {
        if (s.is_normal()) {
            train.push_back(&s);
        }
    }
    if (train.empty()) {
        throw ParameterError("manifest has no normal samples to build a bank from");
    }

    std::vector<MaskedPatchSet> per_image(train.size());
    parallel_for(train.size(), [&](std::size_t i) {
        per_image[i] = process_sample(manifest, *train[i], opts.features).masked;
    });

    std::vector<float> candidates;
    BankMeta meta;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (per_image[i].dim != manifest.feature_dim) {
            throw ShapeError("sample '" + train[i]->id + "' has mismatched feature dim");
        }
        candidates.insert(candidates.end(), per_image[i].vectors.begin(), per_image[i].vectors.end());
        meta.source_sample_ids.push_back(train[i]->id);
    }
    const std::size_t dim = manifest.feature_dim;
    MatrixView cand_view{candidates.data(), candidates.size() / dim, dim};
    if (cand_view.rows == 0) {
        throw ShapeError("no patches survived masking");
    }

    meta.coreset_ratio = opts.coreset_ratio;
    meta.lambda = opts.features.bpm.lambda;
    meta.kernel_size = opts.features.bpm.kernel_size;
    meta.soft_mask = opts.features.bpm.soft_mask;
    meta.border = opts.features.bpm.border;
    meta.l2_normalize_layers = opts.features.l2_normalize_layers;
    meta.layer_set = manifest.layers;
    if (meta.layer_set.empty() && !train.empty()) {
        for (std::size_t l = 0; l < train.front()->feature_paths.size(); ++l) {
            meta.layer_set.push_back(static_cast<int>(l));
        }
    }
    meta.creation_seed = opts.seed;
    meta.candidate_count = cand_view.rows;

    return MemoryBank(dim, subsample_rows(cand_view, opts.coreset_ratio, opts.seed), std::move(meta));
}

// Union of several banks in list order, then coreset-subsampled.
inline MemoryBank merge_banks(std::span<const MemoryBank> banks, double coreset_ratio, std::uint64_t seed) {
    if (banks.empty()) {
        throw ParameterError("merge_banks needs at least one bank");
    }
    const std::size_t dim = banks.front().dim();
    std::vector<float> all;
    BankMeta meta = banks.front().meta();
    meta.source_sample_ids.clear();
    for (const auto& b : banks) {
        if (b.dim() != dim) {
            throw ShapeError("cannot merge banks of dim " + std::to_string(dim) + " and " + std::to_string(b.dim()));
        }
        all.insert(all.end(), b.vectors().begin(), b.vectors().end());
        const auto& ids = b.meta().source_sample_ids;
        meta.source_sample_ids.insert(meta.source_sample_ids.end(), ids.begin(), ids.end());
    }
    MatrixView view{all.data(), all.size() / dim, dim};
    meta.coreset_ratio = coreset_ratio;
    meta.creation_seed = seed;
    meta.candidate_count = view.rows;
    return MemoryBank(dim, subsample_rows(view, coreset_ratio, seed), std::move(meta));
}

inline nlohmann::ordered_json bank_meta_to_json(const MemoryBank& bank) {
    const auto& m = bank.meta();
    nlohmann::ordered_json doc;
    doc["format"] = kBankFormatName;
    doc["version"] = kBankFormatVersion;
    doc["dim"] = bank.dim();
    doc["count"] = bank.size();
    doc["source_sample_ids"] = m.source_sample_ids;
    doc["coreset_ratio"] = m.coreset_ratio;
    doc["lambda"] = m.lambda;
    doc["kernel_size"] = m.kernel_size;
    doc["soft_mask"] = m.soft_mask;
    doc["border"] = std::string(to_string(m.border));
    doc["l2_normalize_layers"] = m.l2_normalize_layers;
    doc["layer_set"] = m.layer_set;
    doc["creation_seed"] = m.creation_seed;
    doc["candidate_count"] = m.candidate_count;
    return doc;
}

inline void save_bank(const MemoryBank& bank, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create bank directory " + dir.string() + ": " + ec.message());
    }
    write_tensor(dir / "vectors.uft1", Tensor({bank.size(), bank.dim()}, bank.vectors()));
    std::ofstream out(dir / "meta.json", std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + (dir / "meta.json").string());
    }
    out << bank_meta_to_json(bank).dump(2) << '\n';
}

inline MemoryBank load_bank(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    std::ifstream in(meta_path);
    if (!in) {
        throw IoError("cannot open bank sidecar: " + meta_path.string());
    }
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt bank sidecar " + meta_path.string() + ": " + e.what());
    }

    BankMeta meta;
    std::size_t dim = 0;
    std::size_t count = 0;
    try {
        if (doc.at("format").get<std::string>() != kBankFormatName) {
            throw FormatError("not a patchbank bank sidecar: " + meta_path.string());
        }
        if (doc.at("version").get<int>() != kBankFormatVersion) {
            throw FormatError("unsupported bank version " + doc.at("version").dump());
        }
        dim = doc.at("dim").get<std::size_t>();
        count = doc.at("count").get<std::size_t>();
        meta.source_sample_ids = doc.at("source_sample_ids").get<std::vector<std::string>>();
        meta.coreset_ratio = doc.at("coreset_ratio").get<double>();
        meta.lambda = doc.at("lambda").get<double>();
        meta.kernel_size = doc.at("kernel_size").get<int>();
        meta.soft_mask = doc.at("soft_mask").get<bool>();
        meta.border = parse_border_mode(doc.at("border").get<std::string>());
        meta.l2_normalize_layers = doc.at("l2_normalize_layers").get<bool>();
        meta.layer_set = doc.at("layer_set").get<std::vector<int>>();
        meta.creation_seed = doc.at("creation_seed").get<std::uint64_t>();
        meta.candidate_count = doc.at("candidate_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt bank sidecar " + meta_path.string() + ": " + e.what());
    } catch (const ParameterError& e) {
        throw FormatError("corrupt bank sidecar " + meta_path.string() + ": " + e.what());
    }

    Tensor t = read_tensor(dir / "vectors.uft1");
    if (t.dims.size() != 2 || t.dims[0] != count || t.dims[1] != dim) {
        throw FormatError("bank " + dir.string() + ": sidecar says " + std::to_string(count) + "x" +
                          std::to_string(dim) + " but vectors tensor disagrees");
    }
    return MemoryBank(dim, std::move(t.data), std::move(meta));
}

}  // namespace patchbank
