#pragma once

// Evaluation metrics: image/pixel AUROC, NMI, ARI, and Hungarian-matched F1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "patchbank/error.hpp"

namespace patchbank {

namespace detail {

inline void check_binary_inputs(std::size_t scores, std::size_t labels) {
    if (scores != labels) {
        throw ShapeError("scores and labels differ in length");
    }
}

}  // namespace detail

// Mann-Whitney AUROC with average ranks for ties. The numerator 2U is an
// integer, so the result equals the pair-counting definition bit for bit.
template <typename Score, typename Label>
double auroc(std::span<const Score> scores, std::span<const Label> labels) {
    detail::check_binary_inputs(scores.size(), labels.size());
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(static_cast<double>(scores[i]))) {
            throw ParameterError("AUROC scores must be finite");
        }
        if (labels[i] != 0 && labels[i] != 1) {
            throw ParameterError("AUROC labels must be 0 or 1");
        }
        pos += labels[i] == 1 ? 1 : 0;
    }
    const std::uint64_t neg = scores.size() - pos;
    if (pos == 0 || neg == 0) {
        throw ParameterError("undefined AUROC: need both positive and negative samples");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the rank sum of positives; a tie group at 1-based positions
    // lo..hi has average rank (lo + hi) / 2.
    std::uint64_t twice_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        std::uint64_t group_pos = 0;
        for (std::size_t t = i; t < j; ++t) {
            group_pos += labels[order[t]] == 1 ? 1 : 0;
        }
        twice_rank_sum += group_pos * static_cast<std::uint64_t>(i + 1 + j);
        i = j;
    }
    const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
    return static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
}

inline double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auroc(std::span<const double>(scores), std::span<const int>(labels));
}

// One sample's pixel scores and ground-truth mask, same length.
struct PixelSample {
    std::span<const float> scores;
    std::span<const std::uint8_t> mask;
};

inline constexpr std::size_t kPixelAurocExactLimit = 10'000'000;
inline constexpr std::size_t kPixelAurocBins = 65'536;

// AUROC over all pixels of all samples. Pools exactly below `exact_limit`
// pixels; above it, uses a fixed-width histogram over [min, max].
inline double pixel_auroc(std::span<const PixelSample> samples, std::size_t exact_limit = kPixelAurocExactLimit,
                          std::size_t bins = kPixelAurocBins) {
    if (samples.empty()) {
        throw ParameterError("pixel AUROC needs at least one sample");
    }
    std::size_t total = 0;
    for (const auto& s : samples) {
        if (s.scores.size() != s.mask.size()) {
            throw ShapeError("heatmap and pixel mask differ in size");
        }
        total += s.scores.size();
    }

    if (total <= exact_limit) {
        std::vector<float> scores;
        std::vector<std::uint8_t> labels;
        scores.reserve(total);
        labels.reserve(total);
        for (const auto& s : samples) {
            scores.insert(scores.end(), s.scores.begin(), s.scores.end());
            labels.insert(labels.end(), s.mask.begin(), s.mask.end());
        }
        return auroc(std::span<const float>(scores), std::span<const std::uint8_t>(labels));
    }

    if (bins < 1) {
        throw ParameterError("histogram needs at least one bin");
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& s : samples) {
        for (float v : s.scores) {
            if (!std::isfinite(v)) {
                throw ParameterError("AUROC scores must be finite");
            }
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
        }
    }
    std::vector<std::uint64_t> pos_hist(bins, 0);
    std::vector<std::uint64_t> neg_hist(bins, 0);
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (const auto& s : samples) {
        for (std::size_t i = 0; i < s.scores.size(); ++i) {
            auto b = static_cast<std::size_t>((static_cast<double>(s.scores[i]) - lo) / width);
            b = std::min(b, bins - 1);
            if (s.mask[i] == 1) {
                ++pos_hist[b];
            } else if (s.mask[i] == 0) {
                ++neg_hist[b];
            } else {
                throw ParameterError("pixel mask must be binary");
            }
        }
    }
    std::uint64_t pos = 0;
    std::uint64_t neg = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        pos += pos_hist[b];
        neg += neg_hist[b];
    }
    if (pos == 0 || neg == 0) {
        throw ParameterError("undefined AUROC: need both positive and negative pixels");
    }
    long double twice_wins = 0.0L;
    std::uint64_t neg_below = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        twice_wins += static_cast<long double>(pos_hist[b]) * (2.0L * neg_below + neg_hist[b]);
        neg_below += neg_hist[b];
    }
    return static_cast<double>(twice_wins / (2.0L * pos * neg));
}

// Contingency table between two labelings; labels are remapped to dense ids
// in order of first appearance.
struct Contingency {
    std::vector<std::vector<std::uint64_t>> counts;  // [pred][truth]
    std::vector<std::uint64_t> pred_sizes;
    std::vector<std::uint64_t> truth_sizes;
    std::uint64_t total = 0;
};

inline std::vector<std::size_t> dense_labels(std::span<const int> labels, std::size_t& classes) {
    std::map<int, std::size_t> ids;
    std::vector<std::size_t> out;
    out.reserve(labels.size());
    for (int l : labels) {
        auto [it, inserted] = ids.try_emplace(l, ids.size());
        out.push_back(it->second);
    }
    classes = ids.size();
    return out;
}

inline Contingency contingency(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size()) {
        throw ShapeError("partitions differ in length");
    }
    if (predicted.empty()) {
        throw ParameterError("partitions must be nonempty");
    }
    std::size_t np = 0;
    std::size_t nt = 0;
    const auto p = dense_labels(predicted, np);
    const auto t = dense_labels(truth, nt);
    Contingency c;
    c.counts.assign(np, std::vector<std::uint64_t>(nt, 0));
    c.pred_sizes.assign(np, 0);
    c.truth_sizes.assign(nt, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        ++c.counts[p[i]][t[i]];
        ++c.pred_sizes[p[i]];
        ++c.truth_sizes[t[i]];
    }
    c.total = p.size();
    return c;
}

namespace detail {

inline double entropy(const std::vector<std::uint64_t>& sizes, double total) {
    double h = 0.0;
    for (auto s : sizes) {
        if (s > 0) {
            const double p = static_cast<double>(s) / total;
            h -= p * std::log(p);
        }
    }
    return h;
}

// True when each predicted cluster maps onto exactly one truth class and
// vice versa.
inline bool same_partition(const Contingency& c) {
    if (c.pred_sizes.size() != c.truth_sizes.size()) {
        return false;
    }
    for (const auto& row : c.counts) {
        std::size_t nonzero = 0;
        for (auto v : row) {
            nonzero += v > 0 ? 1 : 0;
        }
        if (nonzero != 1) {
            return false;
        }
    }
    return true;
}

inline double choose2(std::uint64_t n) { return static_cast<double>(n) * static_cast<double>(n - (n > 0)) / 2.0; }

}  // namespace detail

// Normalized mutual information with geometric-mean normalization and
// natural-log entropies. A zero entropy on either side gives 1 when the
// partitions coincide and 0 otherwise.
inline double nmi(std::span<const int> predicted, std::span<const int> truth) {
    const Contingency c = contingency(predicted, truth);
    const double n = static_cast<double>(c.total);
    const double hp = detail::entropy(c.pred_sizes, n);
    const double ht = detail::entropy(c.truth_sizes, n);
    if (hp == 0.0 || ht == 0.0) {
        return detail::same_partition(c) ? 1.0 : 0.0;
    }
    double mi = 0.0;
    for (std::size_t i = 0; i < c.counts.size(); ++i) {
        for (std::size_t j = 0; j < c.counts[i].size(); ++j) {
            const auto nij = c.counts[i][j];
            if (nij == 0) {
                continue;
            }
            const double pij = static_cast<double>(nij) / n;
            mi += pij * std::log(static_cast<double>(nij) * n /
                                 (static_cast<double>(c.pred_sizes[i]) * static_cast<double>(c.truth_sizes[j])));
        }
    }
    return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

// Adjusted Rand index. A zero denominator gives 1 when the partitions
// coincide and 0 otherwise.
inline double ari(std::span<const int> predicted, std::span<const int> truth) {
    const Contingency c = contingency(predicted, truth);
    double index = 0.0;
    for (const auto& row : c.counts) {
        for (auto v : row) {
            index += detail::choose2(v);
        }
    }
    double sum_pred = 0.0;
    for (auto v : c.pred_sizes) {
        sum_pred += detail::choose2(v);
    }
    double sum_truth = 0.0;
    for (auto v : c.truth_sizes) {
        sum_truth += detail::choose2(v);
    }
    const double pairs = detail::choose2(c.total);
    const double expected = pairs > 0.0 ? sum_pred * sum_truth / pairs : 0.0;
    const double max_index = 0.5 * (sum_pred + sum_truth);
    const double denom = max_index - expected;
    if (denom == 0.0) {
        return detail::same_partition(c) ? 1.0 : 0.0;
    }
    return (index - expected) / denom;
}

struct Assignment {
    std::vector<std::size_t> row_to_col;  // size rows; npos when unmatched
    double cost = 0.0;
};

inline constexpr std::size_t kUnassigned = static_cast<std::size_t>(-1);

// Minimum-cost one-to-one assignment for a rows x cols cost matrix
// (shortest augmenting paths with potentials). The smaller side is padded
// with zero-cost dummies; rows matched to a dummy column report kUnassigned.
inline Assignment solve_assignment(const std::vector<std::vector<double>>& cost) {
    const std::size_t rows = cost.size();
    if (rows == 0) {
        return {};
    }
    const std::size_t cols = cost.front().size();
    for (const auto& r : cost) {
        if (r.size() != cols) {
            throw ShapeError("cost matrix rows differ in length");
        }
    }
    const std::size_t n = std::max(rows, cols);
    auto at = [&](std::size_t i, std::size_t j) { return i < rows && j < cols ? cost[i][j] : 0.0; };

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0);
    std::vector<double> v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0);  // column -> row (1-based, 0 = free)
    std::vector<std::size_t> way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    Assignment a;
    a.row_to_col.assign(rows, kUnassigned);
    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t i = match[j];
        if (i >= 1 && i <= rows && j <= cols) {
            a.row_to_col[i - 1] = j - 1;
            a.cost += cost[i - 1][j - 1];
        }
    }
    return a;
}

// F1 of predicted cluster i against truth class j.
inline double pair_f1(const Contingency& c, std::size_t pred, std::size_t truth) {
    const double overlap = static_cast<double>(c.counts[pred][truth]);
    return 2.0 * overlap / static_cast<double>(c.pred_sizes[pred] + c.truth_sizes[truth]);
}

// Macro F1 over truth classes after mapping clusters to classes one to one.
// Truth classes left without a cluster contribute 0.
inline double macro_f1(const Contingency& c, std::span<const std::size_t> pred_to_truth) {
    std::vector<double> per_class(c.truth_sizes.size(), 0.0);
    for (std::size_t p = 0; p < pred_to_truth.size(); ++p) {
        if (pred_to_truth[p] != kUnassigned) {
            per_class[pred_to_truth[p]] = pair_f1(c, p, pred_to_truth[p]);
        }
    }
    // Sorted, extended-precision sum: matchings with equal per-class F1
    // multisets give bit-identical results.
    std::sort(per_class.begin(), per_class.end());
    long double sum = 0.0L;
    for (double f : per_class) {
        sum += f;
    }
    return static_cast<double>(sum / static_cast<long double>(per_class.size()));
}

// Matches clusters to classes with the Hungarian method, maximizing the
// summed per-pair F1, and reports the resulting macro F1.
inline double hungarian_f1(std::span<const int> predicted, std::span<const int> truth) {
    const Contingency c = contingency(predicted, truth);
    std::vector<std::vector<double>> cost(c.pred_sizes.size(), std::vector<double>(c.truth_sizes.size()));
    for (std::size_t i = 0; i < cost.size(); ++i) {
        for (std::size_t j = 0; j < cost[i].size(); ++j) {
            cost[i][j] = -pair_f1(c, i, j);
        }
    }
    const Assignment a = solve_assignment(cost);
    return macro_f1(c, a.row_to_col);
}

inline double nmi(const std::vector<int>& p, const std::vector<int>& t) { return nmi(std::span(p), std::span(t)); }
inline double ari(const std::vector<int>& p, const std::vector<int>& t) { return ari(std::span(p), std::span(t)); }
inline double hungarian_f1(const std::vector<int>& p, const std::vector<int>& t) {
    return hungarian_f1(std::span(p), std::span(t));
}

}  // namespace patchbank
