#pragma once

// Command-line front end. run() returns 0 on success, 1 on usage or
// parameter errors, 2 on runtime failures (I/O, malformed files, shape
// mismatches).

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "patchbank/pipeline.hpp"
#include "patchbank/synth.hpp"

namespace patchbank {

inline constexpr const char* kVersion = "1.0.0";

inline std::string version_string() {
    return std::string("patchbank ") + kVersion + " (UFT1 v" + std::to_string(kTensorFormatVersion) +
           ", bank sidecar v" + std::to_string(kBankFormatVersion) + ")";
}

namespace cli {

// Flags shared by every subcommand that preprocesses features. Unset
// optionals fall back to the bank metadata (score, cluster) or defaults.
struct FeatureFlags {
    std::optional<int> kernel_size;
    std::optional<double> lambda;
    bool soft_mask = false;
    std::optional<std::string> border;
    bool l2_normalize_layers = false;

    void add_to(CLI::App& app) {
        app.add_option("--kernel-size", kernel_size, "BPM smoothing kernel size n (odd, default 7)");
        app.add_option("--lambda", lambda, "BPM binarization threshold (default 0.1)");
        app.add_flag("--soft-mask", soft_mask, "weight patches by smoothed attention instead of masking");
        app.add_option("--border", border, "smoothing border mode: zero or renorm (default zero)");
        app.add_flag("--l2-normalize-layers", l2_normalize_layers, "L2-normalize each layer before averaging");
    }

    FeatureOptions resolve(FeatureOptions base) const {
        if (kernel_size) {
            base.bpm.kernel_size = *kernel_size;
        }
        if (lambda) {
            base.bpm.lambda = *lambda;
        }
        if (soft_mask) {
            base.bpm.soft_mask = true;
        }
        if (border) {
            base.bpm.border = parse_border_mode(*border);
        }
        if (l2_normalize_layers) {
            base.l2_normalize_layers = true;
        }
        base.bpm.validate();
        return base;
    }
};

inline void emit(const std::optional<std::string>& out, const std::string& text) {
    if (out) {
        write_text(*out, text);
    } else {
        std::cout << text << std::flush;
    }
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            parts.push_back(item);
        }
    }
    return parts;
}

inline std::vector<double> parse_values(const std::string& s) {
    std::vector<double> values;
    for (const auto& part : split_list(s)) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != part.size()) {
            throw ParameterError("invalid sweep value '" + part + "'");
        }
        values.push_back(v);
    }
    if (values.empty()) {
        throw ParameterError("--values must list at least one value");
    }
    return values;
}

inline std::string metrics_json(const std::vector<std::pair<std::string, double>>& values) {
    std::string s = "{";
    for (std::size_t i = 0; i < values.size(); ++i) {
        s += (i ? ", " : "") + nlohmann::json(values[i].first).dump() + ": " + fixed6(values[i].second);
    }
    return s + "}\n";
}

}  // namespace cli

inline int run(int argc, const char* const* argv) {
    CLI::App app{"patchbank: memory-bank visual anomaly detection"};
    app.require_subcommand(0, 1);
    bool show_version = false;
    app.add_flag("--version", show_version, "print version and file format versions");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a seeded synthetic dataset");
    std::string synth_spec_path;
    std::string synth_out;
    synth_cmd->add_option("--spec", synth_spec_path, "synth spec JSON (missing keys use defaults)")->required();
    synth_cmd->add_option("--out", synth_out, "output directory")->required();

    // build-bank
    auto* build_cmd = app.add_subcommand("build-bank", "build a memory bank from normal training samples");
    std::string build_manifest;
    std::string build_out;
    double coreset_ratio = 0.01;
    std::uint64_t build_seed = 0;
    bool build_strict = false;
    cli::FeatureFlags build_flags;
    build_cmd->add_option("--manifest", build_manifest, "training manifest")->required();
    build_cmd->add_option("--out", build_out, "bank directory (.uftb)")->required();
    build_cmd->add_option("--coreset-ratio", coreset_ratio, "fraction of patches kept (0, 1]");
    build_cmd->add_option("--seed", build_seed, "coreset seed");
    build_cmd->add_flag("--strict", build_strict, "verify every referenced file and shape up front");
    build_flags.add_to(*build_cmd);

    // merge-banks
    auto* merge_cmd = app.add_subcommand("merge-banks", "concatenate banks and re-run the coreset");
    std::vector<std::string> merge_inputs;
    std::string merge_out;
    double merge_ratio = 1.0;
    std::uint64_t merge_seed = 0;
    merge_cmd->add_option("--banks", merge_inputs, "input bank directories")->required()->delimiter(',');
    merge_cmd->add_option("--out", merge_out, "output bank directory")->required();
    merge_cmd->add_option("--coreset-ratio", merge_ratio, "fraction of merged vectors kept (0, 1]");
    merge_cmd->add_option("--seed", merge_seed, "coreset seed");

    // score
    auto* score_cmd = app.add_subcommand("score", "score every sample of a manifest");
    std::string score_bank;
    std::string score_manifest_path;
    std::optional<std::string> score_out;
    std::optional<std::string> heatmap_dir;
    double score_k = 5.0;
    double heatmap_sigma = 4.0;
    bool score_strict = false;
    cli::FeatureFlags score_flags;
    score_cmd->add_option("--bank", score_bank, "bank directory")->required();
    score_cmd->add_option("--manifest", score_manifest_path, "test manifest")->required();
    score_cmd->add_option("--k-ratio", score_k, "top-k percentage of patches averaged (0, 100]");
    score_cmd->add_option("--out", score_out, "scores JSON (stdout when omitted)");
    score_cmd->add_option("--heatmaps", heatmap_dir, "write per-sample pixel heatmaps to this directory");
    score_cmd->add_option("--heatmap-sigma", heatmap_sigma, "heatmap Gaussian blur sigma in pixels");
    score_cmd->add_flag("--strict", score_strict, "verify every referenced file and shape up front");
    score_flags.add_to(*score_cmd);

    // cluster
    auto* cluster_cmd = app.add_subcommand("cluster", "cluster samples by pooled patch features");
    std::string cluster_bank;
    std::string cluster_manifest_path;
    std::optional<std::string> cluster_out;
    double cluster_k = 5.0;
    std::size_t num_clusters = 0;
    std::uint64_t cluster_seed = 0;
    std::string pooling = "topk";
    bool normalize = false;
    bool cluster_strict = false;
    cli::FeatureFlags cluster_flags;
    cluster_cmd->add_option("--bank", cluster_bank, "bank directory")->required();
    cluster_cmd->add_option("--manifest", cluster_manifest_path, "manifest of samples to cluster")->required();
    cluster_cmd->add_option("--k-ratio", cluster_k, "top-k percentage of patches pooled (0, 100]");
    cluster_cmd->add_option("--num-clusters", num_clusters, "number of clusters")->required();
    cluster_cmd->add_option("--seed", cluster_seed, "k-means seed");
    cluster_cmd->add_option("--pooling", pooling, "topk, all or max");
    cluster_cmd->add_flag("--normalize", normalize, "L2-normalize pooled features before k-means");
    cluster_cmd->add_option("--out", cluster_out, "assignments JSON (stdout when omitted)");
    cluster_cmd->add_flag("--strict", cluster_strict, "verify every referenced file and shape up front");
    cluster_flags.add_to(*cluster_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "image and pixel AUROC of a scores file");
    std::string eval_scores;
    std::string eval_manifest;
    std::string eval_metrics = "auroc";
    std::optional<std::string> eval_heatmaps;
    eval_cmd->add_option("--scores", eval_scores, "scores JSON from `score`")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "labelled test manifest")->required();
    eval_cmd->add_option("--metrics", eval_metrics, "comma list of auroc, pixel-auroc");
    eval_cmd->add_option("--heatmaps", eval_heatmaps, "heatmap directory (needed for pixel-auroc)");

    // eval-cluster
    auto* evalc_cmd = app.add_subcommand("eval-cluster", "NMI, ARI and Hungarian F1 of cluster assignments");
    std::string evalc_assign;
    std::string evalc_manifest;
    std::string evalc_metrics = "nmi,ari,f1";
    evalc_cmd->add_option("--assignments", evalc_assign, "assignments JSON from `cluster`")->required();
    evalc_cmd->add_option("--manifest", evalc_manifest, "manifest with anomaly types")->required();
    evalc_cmd->add_option("--metrics", evalc_metrics, "comma list of nmi, ari, f1");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "AUROC table over k_ratio, lambda or kernel_size");
    std::string sweep_param;
    std::string sweep_values;
    std::optional<std::string> sweep_bank;
    std::optional<std::string> sweep_train;
    std::string sweep_test;
    std::optional<std::string> sweep_out;
    double sweep_k = 5.0;
    double sweep_ratio = 0.01;
    std::uint64_t sweep_seed = 0;
    double sweep_sigma = 4.0;
    bool sweep_no_pixel = false;
    cli::FeatureFlags sweep_flags;
    sweep_cmd->add_option("--param", sweep_param, "k_ratio, lambda or kernel_size")->required();
    sweep_cmd->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep_cmd->add_option("--bank", sweep_bank, "bank reused by a k_ratio sweep");
    sweep_cmd->add_option("--train", sweep_train, "training manifest (bank rebuilt per lambda / kernel_size)");
    sweep_cmd->add_option("--test", sweep_test, "labelled test manifest")->required();
    sweep_cmd->add_option("--k-ratio", sweep_k, "k_ratio for lambda / kernel_size sweeps");
    sweep_cmd->add_option("--coreset-ratio", sweep_ratio, "coreset ratio for rebuilt banks");
    sweep_cmd->add_option("--seed", sweep_seed, "coreset seed for rebuilt banks");
    sweep_cmd->add_option("--heatmap-sigma", sweep_sigma, "heatmap blur sigma for pixel AUROC");
    sweep_cmd->add_flag("--no-pixel", sweep_no_pixel, "skip the pixel AUROC column");
    sweep_cmd->add_option("--out", sweep_out, "CSV output (stdout when omitted)");
    sweep_flags.add_to(*sweep_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == static_cast<int>(CLI::ExitCodes::Success) ? 0 : 1;
    }

    try {
        if (show_version) {
            std::cout << version_string() << "\n";
            return 0;
        }
        if (app.get_subcommands().empty()) {
            std::cerr << app.help() << "\nerror: a subcommand is required\n";
            return 1;
        }

        if (synth_cmd->parsed()) {
            std::ifstream in(synth_spec_path);
            if (!in) {
                throw IoError("cannot open synth spec: " + synth_spec_path);
            }
            nlohmann::json doc;
            try {
                doc = nlohmann::json::parse(in);
            } catch (const nlohmann::json::exception& e) {
                throw FormatError("synth spec " + synth_spec_path + ": " + e.what());
            }
            const SynthSpec spec = synth_spec_from_json(doc);
            spec.validate();
            const SynthOutput out = generate(spec, synth_out);
            std::cout << "{\"train\": " << nlohmann::json(out.train_manifest.string()).dump()
                      << ", \"test\": " << nlohmann::json(out.test_manifest.string()).dump()
                      << ", \"test_anomalous\": " << nlohmann::json(out.anomalous_manifest.string()).dump() << "}\n";
            return 0;
        }

        if (build_cmd->parsed()) {
            BuildOptions opts;
            opts.features = build_flags.resolve(FeatureOptions{});
            opts.coreset_ratio = coreset_ratio;
            opts.seed = build_seed;
            coreset_target(1, coreset_ratio);  // validates the ratio before any I/O
            const DatasetManifest m = load_manifest(build_manifest, build_strict);
            const MemoryBank bank = build_bank(m, opts);
            save_bank(bank, build_out);
            std::cerr << "bank: " << bank.size() << " vectors of dim " << bank.dim() << " from "
                      << bank.meta().candidate_count << " candidates\n";
            return 0;
        }

        if (merge_cmd->parsed()) {
            coreset_target(1, merge_ratio);
            std::vector<MemoryBank> banks;
            for (const auto& p : merge_inputs) {
                banks.push_back(load_bank(p));
            }
            save_bank(merge_banks(banks, merge_ratio, merge_seed), merge_out);
            return 0;
        }

        if (score_cmd->parsed()) {
            check_k_ratio(score_k);
            if (!(heatmap_sigma >= 0.0)) {
                throw ParameterError("--heatmap-sigma must be >= 0");
            }
            const MemoryBank bank = load_bank(score_bank);
            ScoreOptions opts;
            opts.features = score_flags.resolve(bank.meta().feature_options());
            opts.k_ratio = score_k;
            const DatasetManifest m = load_manifest(score_manifest_path, score_strict);
            const auto scores = score_manifest(bank, m, opts);
            if (heatmap_dir) {
                write_heatmaps(scores, m, *heatmap_dir, heatmap_sigma);
            }
            cli::emit(score_out, scores_to_json(scores));
            return 0;
        }

        if (cluster_cmd->parsed()) {
            check_k_ratio(cluster_k);
            ClusterOptions opts;
            opts.pooling = parse_pooling(pooling);
            if (num_clusters < 1) {
                throw ParameterError("--num-clusters must be >= 1");
            }
            const MemoryBank bank = load_bank(cluster_bank);
            opts.scoring.features = cluster_flags.resolve(bank.meta().feature_options());
            opts.scoring.k_ratio = cluster_k;
            opts.num_clusters = num_clusters;
            opts.seed = cluster_seed;
            opts.normalize = normalize;
            const DatasetManifest m = load_manifest(cluster_manifest_path, cluster_strict);
            cli::emit(cluster_out, assignments_to_json(cluster_manifest(bank, m, opts)));
            return 0;
        }

        if (eval_cmd->parsed()) {
            const auto names = cli::split_list(eval_metrics);
            for (const auto& n : names) {
                if (n != "auroc" && n != "pixel-auroc") {
                    throw ParameterError("unknown metric '" + n + "' (expected auroc, pixel-auroc)");
                }
                if (n == "pixel-auroc" && !eval_heatmaps) {
                    throw ParameterError("pixel-auroc needs --heatmaps");
                }
            }
            if (names.empty()) {
                throw ParameterError("--metrics is empty");
            }
            const DatasetManifest m = load_manifest(eval_manifest);
            const auto records = read_scores_json(eval_scores);
            std::vector<std::pair<std::string, double>> out;
            for (const auto& n : names) {
                out.emplace_back(n, n == "auroc" ? image_auroc(records, m)
                                                 : pixel_auroc_from_dir(records, m, *eval_heatmaps));
            }
            std::cout << cli::metrics_json(out);
            return 0;
        }

        if (evalc_cmd->parsed()) {
            const auto names = cli::split_list(evalc_metrics);
            for (const auto& n : names) {
                if (n != "nmi" && n != "ari" && n != "f1") {
                    throw ParameterError("unknown metric '" + n + "' (expected nmi, ari, f1)");
                }
            }
            if (names.empty()) {
                throw ParameterError("--metrics is empty");
            }
            const DatasetManifest m = load_manifest(evalc_manifest);
            const auto assignments = read_assignments_json(evalc_assign);
            const ClusterScores s = evaluate_clusters(assignments, m);
            std::vector<std::pair<std::string, double>> out;
            for (const auto& n : names) {
                out.emplace_back(n, n == "nmi" ? s.nmi : n == "ari" ? s.ari : s.f1);
            }
            std::cout << cli::metrics_json(out);
            return 0;
        }

        if (sweep_cmd->parsed()) {
            const SweepParam param = parse_sweep_param(sweep_param);
            const std::vector<double> values = cli::parse_values(sweep_values);
            for (double v : values) {
                validate_sweep_value(param, v);
            }
            check_k_ratio(sweep_k);
            coreset_target(1, sweep_ratio);
            if (param != SweepParam::KRatio && !sweep_train) {
                throw ParameterError("lambda and kernel_size sweeps need --train");
            }
            if (param == SweepParam::KRatio && !sweep_bank && !sweep_train) {
                throw ParameterError("k_ratio sweep needs --bank or --train");
            }
            SweepConfig cfg;
            cfg.heatmap_sigma = sweep_sigma;
            cfg.pixel = !sweep_no_pixel;
            cfg.build.coreset_ratio = sweep_ratio;
            cfg.build.seed = sweep_seed;
            cfg.scoring.k_ratio = sweep_k;

            std::optional<MemoryBank> bank;
            if (sweep_bank && param == SweepParam::KRatio) {
                bank.emplace(load_bank(*sweep_bank));
                cfg.scoring.features = sweep_flags.resolve(bank->meta().feature_options());
            } else {
                cfg.build.features = sweep_flags.resolve(FeatureOptions{});
                cfg.scoring.features = cfg.build.features;
            }
            std::optional<DatasetManifest> train;
            if (sweep_train) {
                train.emplace(load_manifest(*sweep_train));
            }
            const DatasetManifest test = load_manifest(sweep_test);
            const auto rows = sweep(param, values, bank ? &*bank : nullptr, train ? &*train : nullptr, test, cfg);
            cli::emit(sweep_out, sweep_to_csv(param, rows));
            return 0;
        }
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace patchbank
