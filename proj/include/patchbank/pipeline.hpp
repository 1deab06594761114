#pragma once

// Manifest-level orchestration shared by the CLI and the integration tests:
// score every sample, cluster anomalies, evaluate, and sweep parameters.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "patchbank/bank.hpp"
#include "patchbank/clustering.hpp"
#include "patchbank/manifest.hpp"
#include "patchbank/metrics.hpp"
#include "patchbank/parallel.hpp"
#include "patchbank/scoring.hpp"

namespace patchbank {

// Fixed 6-decimal rendering used by every JSON/CSV artifact.
inline std::string fixed6(double v) {
    if (v == 0.0) {
        v = 0.0;  // no "-0.000000"
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s = buf;
    if (s == "-0.000000") {
        s = "0.000000";
    }
    return s;
}

struct SampleScore {
    std::string id;
    ScoreResult result;
};

struct ScoreOptions {
    FeatureOptions features;
    double k_ratio = 5.0;
};

inline std::vector<SampleScore> score_manifest(const MemoryBank& bank, const DatasetManifest& manifest,
                                               const ScoreOptions& opts) {
    check_k_ratio(opts.k_ratio);
    opts.features.bpm.validate();
    if (manifest.feature_dim != bank.dim()) {
        throw ShapeError("manifest feature_dim " + std::to_string(manifest.feature_dim) + " does not match bank dim " +
                         std::to_string(bank.dim()));
    }
    std::vector<SampleScore> out(manifest.samples.size());
    parallel_for(manifest.samples.size(), [&](std::size_t i) {
        const Sample& s = manifest.samples[i];
        const ProcessedImage img = process_sample(manifest, s, opts.features);
        out[i] = {s.id, score_processed(img, bank, opts.k_ratio)};
    });
    return out;
}

inline std::string scores_to_json(const std::vector<SampleScore>& scores) {
    std::ostringstream os;
    os << "[\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const auto& r = scores[i].result;
        os << "  {\"id\": " << nlohmann::json(scores[i].id).dump() << ", \"image_score\": " << fixed6(r.image_score)
           << ", \"fallback_used\": " << (r.fallback_used ? "true" : "false") << ", \"topk_indices\": [";
        for (std::size_t j = 0; j < r.topk_indices.size(); ++j) {
            os << (j ? ", " : "") << r.topk_indices[j];
        }
        os << "]}" << (i + 1 < scores.size() ? "," : "") << "\n";
    }
    os << "]\n";
    return os.str();
}

struct ScoreRecord {
    std::string id;
    double image_score = 0.0;
    bool fallback_used = false;
    std::vector<std::size_t> topk_indices;
};

inline std::vector<ScoreRecord> read_scores_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open scores file: " + path.string());
    }
    std::vector<ScoreRecord> out;
    try {
        const auto doc = nlohmann::json::parse(in);
        for (const auto& obj : doc) {
            out.push_back({obj.at("id").get<std::string>(), obj.at("image_score").get<double>(),
                           obj.at("fallback_used").get<bool>(),
                           obj.at("topk_indices").get<std::vector<std::size_t>>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("scores file " + path.string() + ": " + e.what());
    }
    return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw IoError("cannot open for writing: " + path.string());
    }
    out << text;
}

inline PixelHeatmap heatmap_for(const ScoreResult& r, const DatasetManifest& m, double sigma) {
    return render_heatmap(r.patch_scores, r.grid, m.image_h, m.image_w, sigma);
}

inline void write_heatmaps(const std::vector<SampleScore>& scores, const DatasetManifest& m,
                           const std::filesystem::path& dir, double sigma) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create heatmap directory " + dir.string() + ": " + ec.message());
    }
    parallel_for(scores.size(), [&](std::size_t i) {
        const PixelHeatmap h = heatmap_for(scores[i].result, m, sigma);
        write_tensor(dir / (scores[i].id + ".uft1"), Tensor({h.height, h.width}, h.values));
    });
}

// ---------------------------------------------------------------------------
// Evaluation

inline double image_auroc(std::span<const ScoreRecord> scores, const DatasetManifest& m) {
    std::vector<double> s;
    std::vector<int> labels;
    for (const auto& r : scores) {
        const Sample& sample = m.find(r.id);
        if (!sample.label) {
            throw FormatError("sample '" + r.id + "' has no label in the manifest");
        }
        s.push_back(r.image_score);
        labels.push_back(*sample.label);
    }
    return auroc(s, labels);
}

inline std::vector<ScoreRecord> to_records(const std::vector<SampleScore>& scores) {
    std::vector<ScoreRecord> out;
    for (const auto& s : scores) {
        out.push_back({s.id, s.result.image_score, s.result.fallback_used, s.result.topk_indices});
    }
    return out;
}

// Pixel AUROC for in-memory heatmaps, in manifest sample order.
inline double pixel_auroc_for(const std::vector<std::string>& ids, const std::vector<PixelHeatmap>& heatmaps,
                              const DatasetManifest& m) {
    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(ids.size());
    for (const auto& id : ids) {
        const Sample& s = m.find(id);
        if (!s.pixel_mask_path) {
            throw FormatError("sample '" + id + "' has no pixel mask");
        }
        masks.push_back(read_pixel_mask(m.resolve(*s.pixel_mask_path), m.image_h, m.image_w));
    }
    std::vector<PixelSample> pooled;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (heatmaps[i].values.size() != masks[i].size()) {
            throw ShapeError("heatmap for '" + ids[i] + "' does not match its pixel mask");
        }
        pooled.push_back({heatmaps[i].values, masks[i]});
    }
    return pixel_auroc(pooled);
}

inline double pixel_auroc_from_dir(std::span<const ScoreRecord> scores, const DatasetManifest& m,
                                   const std::filesystem::path& dir) {
    std::vector<std::string> ids;
    std::vector<PixelHeatmap> maps;
    for (const auto& r : scores) {
        Tensor t = read_tensor(dir / (r.id + ".uft1"));
        if (t.dims.size() != 2) {
            throw FormatError("heatmap for '" + r.id + "' must be two-dimensional");
        }
        ids.push_back(r.id);
        maps.push_back({t.dims[0], t.dims[1], std::move(t.data)});
    }
    return pixel_auroc_for(ids, maps, m);
}

inline bool has_all_pixel_masks(const DatasetManifest& m) {
    for (const auto& s : m.samples) {
        if (!s.pixel_mask_path) {
            return false;
        }
    }
    return !m.samples.empty();
}

// ---------------------------------------------------------------------------
// Clustering

struct ClusterAssignment {
    std::string sample_id;
    std::size_t cluster_id = 0;
    std::vector<double> pooled_feature;
};

struct ClusterOptions {
    ScoreOptions scoring;
    std::size_t num_clusters = 2;
    std::uint64_t seed = 0;
    Pooling pooling = Pooling::TopK;
    bool normalize = false;
    std::size_t max_iters = 300;
};

inline std::vector<ClusterAssignment> cluster_manifest(const MemoryBank& bank, const DatasetManifest& manifest,
                                                       const ClusterOptions& opts) {
    check_k_ratio(opts.scoring.k_ratio);
    opts.scoring.features.bpm.validate();
    if (manifest.samples.empty()) {
        throw ParameterError("manifest has no samples to cluster");
    }
    if (opts.num_clusters < 1 || opts.num_clusters > manifest.samples.size()) {
        throw ParameterError("num-clusters must lie in [1, " + std::to_string(manifest.samples.size()) + "]");
    }
    std::vector<std::vector<double>> pooled(manifest.samples.size());
    parallel_for(manifest.samples.size(), [&](std::size_t i) {
        const ProcessedImage img = process_sample(manifest, manifest.samples[i], opts.scoring.features);
        switch (opts.pooling) {
            case Pooling::All:
                pooled[i] = pool_all(img.features);
                break;
            case Pooling::Max: {
                const ScoreResult r = score_processed(img, bank, opts.scoring.k_ratio);
                pooled[i] = pool_max(img.features, r.patch_scores);
                break;
            }
            case Pooling::TopK: {
                const ScoreResult r = score_processed(img, bank, opts.scoring.k_ratio);
                pooled[i] = pool_topk_features(img.features, r.topk_indices);
                break;
            }
        }
    });
    std::vector<std::vector<double>> points = pooled;
    if (opts.normalize) {
        l2_normalize_rows(points);
    }
    const KMeansResult km = kmeans(points, opts.num_clusters, opts.seed, opts.max_iters);
    std::vector<ClusterAssignment> out;
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        out.push_back({manifest.samples[i].id, km.assignments[i], std::move(pooled[i])});
    }
    return out;
}

inline std::string assignments_to_json(const std::vector<ClusterAssignment>& assignments) {
    std::ostringstream os;
    os << "[\n";
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const auto& a = assignments[i];
        os << "  {\"id\": " << nlohmann::json(a.sample_id).dump() << ", \"cluster_id\": " << a.cluster_id
           << ", \"pooled_feature\": [";
        for (std::size_t k = 0; k < a.pooled_feature.size(); ++k) {
            os << (k ? ", " : "") << fixed6(a.pooled_feature[k]);
        }
        os << "]}" << (i + 1 < assignments.size() ? "," : "") << "\n";
    }
    os << "]\n";
    return os.str();
}

inline std::vector<ClusterAssignment> read_assignments_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open assignments file: " + path.string());
    }
    std::vector<ClusterAssignment> out;
    try {
        const auto doc = nlohmann::json::parse(in);
        for (const auto& obj : doc) {
            ClusterAssignment a;
            a.sample_id = obj.at("id").get<std::string>();
            a.cluster_id = obj.at("cluster_id").get<std::size_t>();
            if (obj.contains("pooled_feature")) {
                a.pooled_feature = obj.at("pooled_feature").get<std::vector<double>>();
            }
            out.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("assignments file " + path.string() + ": " + e.what());
    }
    return out;
}

struct ClusterScores {
    double nmi = 0.0;
    double ari = 0.0;
    double f1 = 0.0;
};

// Ground-truth type per sample: anomaly_type when present, "normal" for
// label-0 samples without a type.
inline std::vector<int> truth_types(std::span<const ClusterAssignment> assignments, const DatasetManifest& m) {
    std::map<std::string, int> ids;
    std::vector<int> truth;
    for (const auto& a : assignments) {
        const Sample& s = m.find(a.sample_id);
        std::string type;
        if (s.anomaly_type) {
            type = *s.anomaly_type;
        } else if (s.label && *s.label == 0) {
            type = "normal";
        } else {
            throw FormatError("sample '" + a.sample_id + "' has no anomaly_type");
        }
        auto [it, inserted] = ids.try_emplace(type, static_cast<int>(ids.size()));
        truth.push_back(it->second);
    }
    return truth;
}

inline ClusterScores evaluate_clusters(std::span<const ClusterAssignment> assignments, const DatasetManifest& m) {
    const std::vector<int> truth = truth_types(assignments, m);
    std::vector<int> pred;
    for (const auto& a : assignments) {
        pred.push_back(static_cast<int>(a.cluster_id));
    }
    return {nmi(pred, truth), ari(pred, truth), hungarian_f1(pred, truth)};
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepParam { KRatio, Lambda, KernelSize };

inline SweepParam parse_sweep_param(std::string_view s) {
    if (s == "k_ratio" || s == "k-ratio") {
        return SweepParam::KRatio;
    }
    if (s == "lambda") {
        return SweepParam::Lambda;
    }
    if (s == "kernel_size" || s == "kernel-size") {
        return SweepParam::KernelSize;
    }
    throw ParameterError("unknown sweep parameter '" + std::string(s) + "' (expected k_ratio, lambda or kernel_size)");
}

struct SweepRow {
    double value = 0.0;
    double auroc = 0.0;
    std::optional<double> pixel_auroc;
};

struct SweepConfig {
    BuildOptions build;      // bank construction (used when rebuilding)
    ScoreOptions scoring;    // base scoring options
    double heatmap_sigma = 4.0;
    bool pixel = true;       // add pixel AUROC when every test sample has a mask
};

inline void validate_sweep_value(SweepParam p, double v) {
    switch (p) {
        case SweepParam::KRatio:
            check_k_ratio(v);
            break;
        case SweepParam::Lambda:
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ParameterError("sweep lambda value " + std::to_string(v) + " outside [0, 1]");
            }
            break;
        case SweepParam::KernelSize:
            if (v < 1 || v != std::floor(v) || static_cast<long>(v) % 2 == 0) {
                throw ParameterError("sweep kernel size " + std::to_string(v) + " is not an odd positive integer");
            }
            break;
    }
}

// Evaluates one (bank, scoring options) pair on a test manifest.
inline SweepRow evaluate_setting(double value, const MemoryBank& bank, const DatasetManifest& test,
                                 const ScoreOptions& scoring, double sigma, bool pixel) {
    const auto scores = score_manifest(bank, test, scoring);
    const auto records = to_records(scores);
    SweepRow row{value, image_auroc(records, test), std::nullopt};
    if (pixel && has_all_pixel_masks(test)) {
        std::vector<std::string> ids;
        std::vector<PixelHeatmap> maps(scores.size());
        for (const auto& s : scores) {
            ids.push_back(s.id);
        }
        parallel_for(scores.size(), [&](std::size_t i) { maps[i] = heatmap_for(scores[i].result, test, sigma); });
        row.pixel_auroc = pixel_auroc_for(ids, maps, test);
    }
    return row;
}

// k_ratio sweeps reuse the given bank. lambda / kernel_size sweeps change
// the training-stage masking, so they rebuild from `train` for each value.
inline std::vector<SweepRow> sweep(SweepParam param, std::span<const double> values, const MemoryBank* bank,
                                   const DatasetManifest* train, const DatasetManifest& test,
                                   const SweepConfig& cfg) {
    if (values.empty()) {
        throw ParameterError("sweep needs at least one value");
    }
    for (double v : values) {
        validate_sweep_value(param, v);
    }
    std::vector<SweepRow> rows;
    if (param == SweepParam::KRatio) {
        std::optional<MemoryBank> built;
        if (bank == nullptr) {
            if (train == nullptr) {
                throw ParameterError("k_ratio sweep needs a bank or a training manifest");
            }
            built.emplace(build_bank(*train, cfg.build));
            bank = &*built;
        }
        for (double v : values) {
            ScoreOptions s = cfg.scoring;
            s.k_ratio = v;
            rows.push_back(evaluate_setting(v, *bank, test, s, cfg.heatmap_sigma, cfg.pixel));
        }
        return rows;
    }
    if (train == nullptr) {
        throw ParameterError("lambda and kernel_size sweeps rebuild the bank and need a training manifest");
    }
    for (double v : values) {
        BuildOptions b = cfg.build;
        if (param == SweepParam::Lambda) {
            b.features.bpm.lambda = v;
        } else {
            b.features.bpm.kernel_size = static_cast<int>(v);
        }
        const MemoryBank rebuilt = build_bank(*train, b);
        ScoreOptions s = cfg.scoring;
        s.features = b.features;
        rows.push_back(evaluate_setting(v, rebuilt, test, s, cfg.heatmap_sigma, cfg.pixel));
    }
    return rows;
}

inline std::string format_sweep_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline std::string sweep_to_csv(SweepParam param, const std::vector<SweepRow>& rows) {
    const bool pixel = !rows.empty() && rows.front().pixel_auroc.has_value();
    std::ostringstream os;
    os << (param == SweepParam::KRatio ? "k_ratio" : param == SweepParam::Lambda ? "lambda" : "kernel_size")
       << ",auroc" << (pixel ? ",pixel_auroc" : "") << "\n";
    for (const auto& r : rows) {
        os << format_sweep_value(r.value) << "," << fixed6(r.auroc);
        if (pixel) {
            os << "," << fixed6(*r.pixel_auroc);
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace patchbank
