#pragma once

// Exact nearest-neighbor distances from query patches to a memory bank.
//
// Squared distances use the expanded form |q|^2 + |b|^2 - 2 q.b with every
// dot product accumulated in double over dimensions in index order, so a
// (query, bank) pair always produces the same value regardless of how the
// work is tiled or distributed. sqrt is taken once per query at the end.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "patchbank/error.hpp"
#include "patchbank/parallel.hpp"
#include "patchbank/types.hpp"

namespace patchbank {

struct DistanceVector {
    std::vector<double> distances;       // per query row, L2
    std::vector<std::size_t> grid_index;  // original grid index of the query patch
    std::vector<std::size_t> match;       // argmin bank row

    std::size_t size() const { return distances.size(); }
};

namespace detail {

inline double dot(const float* a, const float* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        acc += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    }
    return acc;
}

inline void check_search_inputs(MatrixView queries, MatrixView bank) {
    if (bank.rows == 0) {
        throw ShapeError("memory bank is empty");
    }
    if (queries.rows == 0) {
        throw ShapeError("query set is empty");
    }
    if (queries.cols != bank.cols) {
        throw ShapeError("query dim " + std::to_string(queries.cols) + " does not match bank dim " +
                         std::to_string(bank.cols));
    }
}

}  // namespace detail

// Precomputed squared norms of the bank rows.
inline std::vector<double> row_squared_norms(MatrixView m) {
    std::vector<double> norms(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        norms[i] = detail::dot(m.data + i * m.cols, m.data + i * m.cols, m.cols);
    }
    return norms;
}

// Blocked search. `bank_norms` may be passed in to reuse across calls.
inline DistanceVector nearest_distances(MatrixView queries, MatrixView bank, std::span<const double> bank_norms = {}) {
    detail::check_search_inputs(queries, bank);
    std::vector<double> owned;
    if (bank_norms.empty()) {
        owned = row_squared_norms(bank);
        bank_norms = owned;
    }

    constexpr std::size_t kQueryTile = 8;
    constexpr std::size_t kBankTile = 512;
    const std::size_t d = queries.cols;
    const std::size_t tiles = (queries.rows + kQueryTile - 1) / kQueryTile;

    std::vector<double> best_sq(queries.rows, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> best_idx(queries.rows, 0);

    parallel_for(tiles, [&](std::size_t tile) {
        const std::size_t q0 = tile * kQueryTile;
        const std::size_t q1 = std::min(queries.rows, q0 + kQueryTile);
        double q_norm[kQueryTile];
        for (std::size_t q = q0; q < q1; ++q) {
            q_norm[q - q0] = detail::dot(queries.data + q * d, queries.data + q * d, d);
        }
        for (std::size_t b0 = 0; b0 < bank.rows; b0 += kBankTile) {
            const std::size_t b1 = std::min(bank.rows, b0 + kBankTile);
            for (std::size_t q = q0; q < q1; ++q) {
                const float* qv = queries.data + q * d;
                double best = best_sq[q];
                std::size_t arg = best_idx[q];
                for (std::size_t b = b0; b < b1; ++b) {
                    const double sq = q_norm[q - q0] + bank_norms[b] - 2.0 * detail::dot(qv, bank.data + b * d, d);
                    if (sq < best) {
                        best = sq;
                        arg = b;
                    }
                }
                best_sq[q] = best;
                best_idx[q] = arg;
            }
        }
    });

    DistanceVector out;
    out.distances.resize(queries.rows);
    out.match = std::move(best_idx);
    out.grid_index.resize(queries.rows);
    // The expanded form only ranks candidates; the reported distance of the
    // winner is recomputed from differences to avoid cancellation.
    for (std::size_t q = 0; q < queries.rows; ++q) {
        const float* qv = queries.data + q * d;
        const float* bv = bank.data + out.match[q] * d;
        double sq = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(qv[k]) - static_cast<double>(bv[k]);
            sq += diff * diff;
        }
        out.distances[q] = std::sqrt(sq);
        out.grid_index[q] = q;
    }
    return out;
}

inline DistanceVector nearest_distances(const MaskedPatchSet& queries, MatrixView bank,
                                        std::span<const double> bank_norms = {}) {
    DistanceVector out = nearest_distances(queries.view(), bank, bank_norms);
    out.grid_index = queries.indices;
    return out;
}

// Reference implementation: plain double loop over (q - b)^2 in long double.
// Test use only.
inline DistanceVector nearest_distances_oracle(MatrixView queries, MatrixView bank) {
    detail::check_search_inputs(queries, bank);
    DistanceVector out;
    for (std::size_t q = 0; q < queries.rows; ++q) {
        long double best = std::numeric_limits<long double>::infinity();
        std::size_t arg = 0;
        for (std::size_t b = 0; b < bank.rows; ++b) {
            long double sq = 0.0L;
            for (std::size_t k = 0; k < queries.cols; ++k) {
                const long double diff = static_cast<long double>(queries.row(q)[k]) - bank.row(b)[k];
                sq += diff * diff;
            }
            if (sq < best) {
                best = sq;
                arg = b;
            }
        }
        out.distances.push_back(static_cast<double>(std::sqrt(best)));
        out.match.push_back(arg);
        out.grid_index.push_back(q);
    }
    return out;
}

}  // namespace patchbank
