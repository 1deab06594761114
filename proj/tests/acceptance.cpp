// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "oracles.hpp"
#include "patchbank/cli.hpp"
#include "patchbank/pipeline.hpp"
#include "patchbank/synth.hpp"
#include "test_util.hpp"

using namespace patchbank;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Scoped PATCHBANK_THREADS override.
class ThreadCap {
public:
    explicit ThreadCap(const char* value) {
        if (const char* old = std::getenv("PATCHBANK_THREADS")) {
            saved_ = old;
        }
        setenv("PATCHBANK_THREADS", value, 1);
    }
    ~ThreadCap() {
        if (saved_) {
            setenv("PATCHBANK_THREADS", saved_->c_str(), 1);
        } else {
            unsetenv("PATCHBANK_THREADS");
        }
    }

private:
    std::optional<std::string> saved_;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
    std::mt19937_64 gen(1001);
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t queries = 0;
    for (int inst = 0; inst < 500; ++inst) {
        const std::size_t m = gen() % 5000 + 1;
        const std::size_t d = gen() % 64 + 1;
        const std::size_t q = gen() % 32 + 1;
        const float scale = std::uniform_real_distribution<float>(0.01f, 100.0f)(gen);
        const auto bank = testutil::random_matrix(gen, m, d, scale);
        const auto qs = testutil::random_matrix(gen, q, d, scale);
        const auto got = nearest_distances(MatrixView{qs.data(), q, d}, MatrixView{bank.data(), m, d});
        const auto want = oracle::nearest(qs, q, bank, m, d);
        for (std::size_t i = 0; i < q; ++i) {
            const double err = want.distance[i] == 0.0 ? (got.distances[i] == 0.0 ? 0.0 : 1.0)
                                                       : std::abs(got.distances[i] - want.distance[i]) /
                                                             want.distance[i];
            worst = std::max(worst, err);
        }
        queries += q;
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-5 && secs < 60.0,
            fmt("500 instances, %zu queries, worst rel err %.2e, %.1f s", queries, worst, secs)};
}

Outcome topk_correctness() {
    std::mt19937_64 gen(1002);
    int mismatches = 0;
    int with_ties = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t n = gen() % 500 + 1;
        std::vector<double> s(n);
        const bool ties = inst % 2 == 0;
        for (auto& v : s) {
            v = ties ? static_cast<double>(gen() % 8) * 0.25 : std::uniform_real_distribution<double>(0, 50)(gen);
        }
        std::vector<double> sorted = s;
        std::sort(sorted.begin(), sorted.end());
        with_ties += std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() ? 1 : 0;
        const double k = inst % 5 == 0 ? std::vector<double>{0.1, 1, 5, 20, 100}[gen() % 5]
                                       : std::uniform_real_distribution<double>(0.05, 100.0)(gen);
        const std::size_t K = topk_count(n, k);
        const double want = oracle::topk_mean(s, K);
        if (topk_score_select(s, k).score != want || topk_score(s, k).score != want) {
            ++mismatches;
        }
    }
    const bool hand = topk_count(20, 5.0) == 1 && topk_count(10, 20.0) == 2;
    return {mismatches == 0 && hand,
            fmt("1000 vectors (%d with ties), %d mismatches; K(20,5)=%zu K(10,20)=%zu", with_ties, mismatches,
                topk_count(20, 5.0), topk_count(10, 20.0))};
}

Outcome coreset_quality() {
    std::mt19937_64 gen(1003);
    double worst_ratio = 0.0;
    int violations = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t m = gen() % 3 + 1;
        const std::size_t rows = m + 1 + gen() % (200 - m);
        const std::size_t d = gen() % 4 + 1;
        const auto pts = testutil::random_matrix(gen, rows, d);
        const MatrixView v{pts.data(), rows, d};
        const double greedy = coverage_radius(v, coreset_subsample(v, m, gen()));
        const double best = oracle::optimal_kcenter_radius(pts, rows, d, m);
        const double ratio = best > 0.0 ? greedy / best : (greedy == 0.0 ? 1.0 : 1e9);
        worst_ratio = std::max(worst_ratio, ratio);
        violations += greedy <= 2.0 * best ? 0 : 1;
    }
    int sweep_failures = 0;
    for (int sweep = 0; sweep < 50; ++sweep) {
        const std::size_t rows = gen() % 150 + 10;
        const std::size_t d = gen() % 8 + 1;
        const auto pts = testutil::random_matrix(gen, rows, d);
        const MatrixView v{pts.data(), rows, d};
        const std::uint64_t seed = gen();
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t m = 1; m <= std::min<std::size_t>(rows, 40); ++m) {
            const double r = coverage_radius(v, coreset_subsample(v, m, seed));
            if (r > prev) {
                ++sweep_failures;
                break;
            }
            prev = r;
        }
    }
    return {violations == 0 && sweep_failures == 0,
            fmt("200 instances, worst greedy/optimal %.3f, %d over 2x; 50 sweeps, %d non-monotone", worst_ratio,
                violations, sweep_failures)};
}

Outcome metric_oracles() {
    std::mt19937_64 gen(1004);
    int auroc_bad = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        const std::size_t n = gen() % 49 + 2;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(gen() % 12);
            y[i] = static_cast<int>(gen() % 2);
        }
        const std::size_t pos = gen() % n;
        y[pos] = 1;
        y[(pos + 1 + gen() % (n - 1)) % n] = 0;
        auroc_bad += auroc(s, y) == oracle::auroc_pairs(s, y) ? 0 : 1;
    }
    int f1_bad = 0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = gen() % 60 + 1;
        const int kp = static_cast<int>(gen() % 6 + 1);
        const int kt = static_cast<int>(gen() % 6 + 1);
        std::vector<int> p(n);
        std::vector<int> t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(gen() % static_cast<unsigned>(kp));
            t[i] = static_cast<int>(gen() % static_cast<unsigned>(kt));
        }
        f1_bad += hungarian_f1(p, t) == oracle::hungarian_f1_bruteforce(p, t) ? 0 : 1;
    }
    double nmi_err = 0.0;
    double ari_err = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t n = gen() % 80 + 2;
        const int kp = static_cast<int>(gen() % 6 + 1);
        const int kt = static_cast<int>(gen() % 6 + 1);
        std::vector<int> p(n);
        std::vector<int> t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = static_cast<int>(gen() % static_cast<unsigned>(kp));
            t[i] = static_cast<int>(gen() % static_cast<unsigned>(kt));
        }
        nmi_err = std::max(nmi_err, std::abs(nmi(p, t) - oracle::nmi_closed_form(p, t)));
        ari_err = std::max(ari_err, std::abs(ari(p, t) - oracle::ari_pairs(p, t)));
    }
    return {auroc_bad == 0 && f1_bad == 0 && nmi_err <= 1e-9 && ari_err <= 1e-9,
            fmt("auroc %d/1000 mismatches; hungarian_f1 %d/200 mismatches; nmi max err %.1e; ari max err %.1e",
                auroc_bad, f1_bad, nmi_err, ari_err)};
}

Outcome smoothing() {
    std::mt19937_64 gen(1005);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    double worst = 0.0;
    bool identity = true;
    for (int inst = 0; inst < 200; ++inst) {
        const std::size_t h = gen() % 20 + 1;
        const std::size_t w = gen() % 20 + 1;
        const int max_n = static_cast<int>(2 * std::min(h, w) - 1);
        const int n = 2 * static_cast<int>(gen() % static_cast<unsigned>((max_n + 1) / 2)) + 1;
        std::vector<float> v(h * w);
        for (auto& x : v) {
            x = u(gen);
        }
        const AttentionMap a({h, w}, v);
        const auto got = smooth_attention(a, n);
        const auto want = oracle::box_filter(v, h, w, n, false);
        for (std::size_t i = 0; i < v.size(); ++i) {
            worst = std::max(worst, std::abs(got.values[i] - want[i]));
        }
        identity = identity && smooth_attention(a, 1).values == v;
    }
    std::vector<float> spike(9, 0.0f);
    spike[4] = 0.9f;
    const auto s = smooth_attention(AttentionMap({3, 3}, spike), 3);
    double spike_err = 0.0;
    for (float x : s.values) {
        spike_err = std::max(spike_err, std::abs(static_cast<double>(x) - 0.1));
    }
    return {worst <= 1e-6 && identity && spike_err <= 1e-7,
            fmt("200 random maps, max err %.1e; n=1 identity %s; 3x3 spike max |v-0.1| %.1e", worst,
                identity ? "exact" : "BROKEN", spike_err)};
}

struct Dataset {
    DatasetManifest train;
    DatasetManifest test;
    DatasetManifest anomalous;
};

Dataset make_dataset(const SynthSpec& spec, const std::filesystem::path& dir) {
    const auto out = generate(spec, dir);
    return {load_manifest(out.train_manifest), load_manifest(out.test_manifest),
            load_manifest(out.anomalous_manifest)};
}

Outcome end_to_end(const std::filesystem::path& root) {
    ThreadCap single("1");
    const auto t0 = Clock::now();
    SynthSpec spec;  // 50/20/20, 14x14, D=32, shift 10 x noise 1
    const Dataset ds = make_dataset(spec, root / "e2e");
    const MemoryBank bank = build_bank(ds.train, BuildOptions{});
    const SweepRow row = evaluate_setting(5.0, bank, ds.test, ScoreOptions{}, 4.0, true);
    const double secs = seconds_since(t0);
    return {row.auroc == 1.0 && *row.pixel_auroc >= 0.99 && secs < 30.0,
            fmt("bank %zu vectors; image AUROC %.6f, pixel AUROC %.6f, %.2f s single-thread", bank.size(), row.auroc,
                *row.pixel_auroc, secs)};
}

// Mean image score of anomalous minus normal test samples.
struct Separation {
    double normal = 0.0;
    double anomalous = 0.0;
    double gap() const { return anomalous - normal; }
};

Separation separation(const MemoryBank& bank, const DatasetManifest& test, const ScoreOptions& opts) {
    Separation s;
    std::size_t nn = 0;
    std::size_t na = 0;
    const auto scores = score_manifest(bank, test, opts);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (*test.samples[i].label == 1) {
            s.anomalous += scores[i].result.image_score;
            ++na;
        } else {
            s.normal += scores[i].result.image_score;
            ++nn;
        }
    }
    s.normal /= static_cast<double>(nn);
    s.anomalous /= static_cast<double>(na);
    return s;
}

Outcome bpm_mechanism(const std::filesystem::path& root) {
    int hard_ok = 0;
    int soft_wins = 0;
    double worst_hard = 0.0;
    std::vector<double> soft_gaps;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        SynthSpec spec;
        spec.anomaly_region = AnomalyRegion::Background;
        spec.seed = seed;
        const Dataset ds = make_dataset(spec, root / ("bpm_" + std::to_string(seed)));
        BuildOptions hard;
        const MemoryBank hard_bank = build_bank(ds.train, hard);
        ScoreOptions hard_opts;
        const Separation h = separation(hard_bank, ds.test, hard_opts);
        const double rel = std::abs(h.gap()) / h.normal;
        worst_hard = std::max(worst_hard, rel);
        hard_ok += rel <= 0.10 ? 1 : 0;

        BuildOptions soft;
        soft.features.bpm.soft_mask = true;
        const MemoryBank soft_bank = build_bank(ds.train, soft);
        ScoreOptions soft_opts;
        soft_opts.features = soft.features;
        const Separation s = separation(soft_bank, ds.test, soft_opts);
        soft_gaps.push_back(s.gap());
        soft_wins += s.gap() > h.gap() ? 1 : 0;
    }
    return {hard_ok == 20 && soft_wins >= 18,
            fmt("hard mask within 10%% in %d/20 seeds (worst %.2f%%); soft separation larger in %d/20 seeds "
                "(median soft gap %.4f)",
                hard_ok, 100.0 * worst_hard, soft_wins, median(soft_gaps))};
}

Outcome k_sweep(const std::filesystem::path& root) {
    SynthSpec spec;
    spec.seed = 11;
    const Dataset ds = make_dataset(spec, root / "ksweep");
    const MemoryBank bank = build_bank(ds.train, BuildOptions{});
    SweepConfig cfg;
    const std::vector<double> ks{0.1, 1, 5, 20, 100};
    const auto rows = sweep(SweepParam::KRatio, ks, &bank, nullptr, ds.test, cfg);
    const double at01 = rows[0].auroc;
    const double at5 = rows[2].auroc;
    std::string table;
    for (const auto& r : rows) {
        table += fmt(" k=%g:%.4f", r.value, r.auroc);
    }
    return {at5 >= at01 && at5 >= 0.99, "AUROC" + table};
}

Outcome clustering(const std::filesystem::path& root) {
    std::vector<double> nmis;
    std::vector<double> f1s;
    int all_lower = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthSpec spec;
        spec.seed = 100 + seed;
        const Dataset ds = make_dataset(spec, root / ("clust_" + std::to_string(seed)));
        const MemoryBank bank = build_bank(ds.train, BuildOptions{});
        ClusterOptions opts;
        opts.num_clusters = spec.n_anomaly_types;
        opts.seed = seed;
        const auto topk = evaluate_clusters(cluster_manifest(bank, ds.anomalous, opts), ds.anomalous);
        opts.pooling = Pooling::All;
        const auto all = evaluate_clusters(cluster_manifest(bank, ds.anomalous, opts), ds.anomalous);
        nmis.push_back(topk.nmi);
        f1s.push_back(topk.f1);
        all_lower += all.nmi < topk.nmi ? 1 : 0;
        per_seed += fmt(" %.2f/%.2f", topk.nmi, all.nmi);
    }
    const double mn = median(nmis);
    const double mf = median(f1s);
    return {mn >= 0.9 && mf >= 0.9 && all_lower >= 8,
            fmt("median NMI %.4f, median F1 %.4f; pool_all NMI lower in %d/10 (topk/all NMI:", mn, mf, all_lower) +
                per_seed + ")"};
}

Outcome determinism(const std::filesystem::path& root) {
    using testutil::run_cli;
    using testutil::slurp;
    std::ofstream(root / "det_spec.json") << "{\"n_normal_train\": 8, \"n_normal_test\": 5, \"n_anomalous_test\": 6, "
                                             "\"dim\": 16, \"n_layers\": 3, \"seed\": 21}";
    std::vector<std::string> diffs;
    std::vector<std::string> failures;
    // Each command runs twice with identical arguments; stdout and the
    // artifacts written by each run must match byte for byte.
    auto check = [&](const std::string& name, const std::vector<std::string>& args,
                     const std::function<std::string()>& artifact) {
        const auto a = run_cli(args);
        const std::string first = artifact();
        const auto b = run_cli(args);
        if (a.code != 0 || b.code != 0) {
            failures.push_back(name + " exit " + std::to_string(a.code) + "/" + std::to_string(b.code) + " " + a.err);
            return;
        }
        if (a.out != b.out || first != artifact()) {
            diffs.push_back(name);
        }
    };
    auto dir_bytes = [](const std::filesystem::path& d) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::recursive_directory_iterator(d)) {
            if (e.is_regular_file()) {
                files.push_back(e.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::string all;
        for (const auto& f : files) {
            all += std::filesystem::relative(f, d).string() + '\n' + slurp(f);
        }
        return all;
    };
    const auto r = root / "det";
    auto p = [&](const std::string& name) { return (r / name).string(); };

    check("synth", {"synth", "--spec", (root / "det_spec.json").string(), "--out", p("data")},
          [&] { return dir_bytes(p("data")); });
    const std::string train = p("data") + "/train.json";
    const std::string test = p("data") + "/test.json";
    const std::string anomalous = p("data") + "/test_anomalous.json";
    check("build-bank",
          {"build-bank", "--manifest", train, "--coreset-ratio", "0.05", "--seed", "3", "--out", p("bank")},
          [&] { return dir_bytes(p("bank")); });
    check("build-bank-2",
          {"build-bank", "--manifest", test, "--coreset-ratio", "0.05", "--seed", "4", "--out", p("bank2")},
          [&] { return dir_bytes(p("bank2")); });
    check("merge-banks",
          {"merge-banks", "--banks", p("bank") + "," + p("bank2"), "--coreset-ratio", "0.5", "--out", p("merged")},
          [&] { return dir_bytes(p("merged")); });
    check("score",
          {"score", "--bank", p("bank"), "--manifest", test, "--out", p("scores.json"), "--heatmaps", p("heat")},
          [&] { return slurp(p("scores.json")) + dir_bytes(p("heat")); });
    check("cluster",
          {"cluster", "--bank", p("bank"), "--manifest", anomalous, "--num-clusters", "3", "--seed", "5", "--out",
           p("assign.json")},
          [&] { return slurp(p("assign.json")); });
    check("eval",
          {"eval", "--scores", p("scores.json"), "--manifest", test, "--metrics", "auroc,pixel-auroc", "--heatmaps",
           p("heat")},
          [] { return std::string(); });
    check("eval-cluster", {"eval-cluster", "--assignments", p("assign.json"), "--manifest", anomalous},
          [] { return std::string(); });
    check("sweep",
          {"sweep", "--param", "kernel_size", "--values", "1,3,7", "--train", train, "--test", test, "--coreset-ratio",
           "0.05", "--out", p("sweep.csv")},
          [&] { return slurp(p("sweep.csv")); });
    std::string detail = "8 subcommands rerun";
    for (const auto& d : diffs) {
        detail += "; differs: " + d;
    }
    for (const auto& f : failures) {
        detail += "; failed: " + f;
    }
    return {diffs.empty() && failures.empty(), detail};
}

Outcome low_shot(const std::filesystem::path& root) {
    SynthSpec spec;
    spec.n_normal_train = 1;
    spec.seed = 5;
    const Dataset ds = make_dataset(spec, root / "lowshot");
    const MemoryBank bank = build_bank(ds.train, BuildOptions{});
    const auto scores = score_manifest(bank, ds.test, ScoreOptions{});
    const double a = image_auroc(to_records(scores), ds.test);
    return {scores.size() == ds.test.samples.size(),
            fmt("bank of %zu vectors from 1 image; scored %zu samples, AUROC %.4f", bank.size(), scores.size(), a)};
}

}  // namespace

int main() {
    testutil::TempDir root("acceptance");
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"oracle-equivalence", oracle_equivalence},
        {"topk-score", topk_correctness},
        {"coreset-quality", coreset_quality},
        {"metric-oracles", metric_oracles},
        {"smoothing", smoothing},
        {"end-to-end-synthetic", [&] { return end_to_end(root.path()); }},
        {"bpm-mechanism", [&] { return bpm_mechanism(root.path()); }},
        {"k-sweep-shape", [&] { return k_sweep(root.path()); }},
        {"clustering", [&] { return clustering(root.path()); }},
        {"determinism", [&] { return determinism(root.path()); }},
        {"low-shot", [&] { return low_shot(root.path()); }},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
