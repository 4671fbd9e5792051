// Copyright 2026-present the knnvc project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Cosine k-nearest-neighbors selection and regression over a MatchingSet.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/feature_file.hpp"
#include "knnvc/kernels.hpp"
#include "knnvc/matching_set.hpp"
#include "knnvc/metadata.hpp"
#include "knnvc/parallel.hpp"

namespace knnvc {

enum class Metric { kCosine };
enum class Weighting { kUniform };
enum class KOverflow { kError, kClamp };

inline constexpr std::size_t kDefaultK = 4;

struct KnnConfig {
    std::size_t k = kDefaultK;
    Metric metric = Metric::kCosine;
    Weighting weighting = Weighting::kUniform;
    KOverflow k_overflow = KOverflow::kClamp;
    // 0 selects worker_count().
    std::size_t workers = 0;

    void
    validate() const {
        if (k < 1) {
            throw Error(ErrorKind::kConfig, "k must be >= 1");
        }
    }
};

inline constexpr std::string_view
to_string(Metric) {
    return "cosine";
}

inline constexpr std::string_view
to_string(Weighting) {
    return "uniform";
}

inline constexpr std::string_view
to_string(KOverflow o) {
    return o == KOverflow::kError ? "error" : "clamp";
}

/// Neighbors ordered by ascending distance, ties by ascending row index.
struct NeighborResult {
    std::vector<std::size_t> indices;
    std::vector<float> distances;

    bool
    operator==(const NeighborResult&) const = default;
};

/// 1 - dot(a, b) for unit vectors, clamped to [0, 2] against rounding.
inline float
cosine_distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::kConfig,
                    "dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    return std::clamp(1.0f - kernels::dot(a, b), 0.0f, 2.0f);
}

/// Number of neighbors actually selected from a set of size n.
inline std::size_t
effective_k(const KnnConfig& config, std::size_t n) {
    config.validate();
    if (n == 0) {
        throw Error(ErrorKind::kEmptySet, "matching set is empty");
    }
    if (config.k > n) {
        if (config.k_overflow == KOverflow::kError) {
            throw Error(ErrorKind::kInsufficientData,
                        "k=" + std::to_string(config.k) + " exceeds matching set size " + std::to_string(n));
        }
        return n;
    }
    return config.k;
}

namespace detail {

inline constexpr std::size_t kQueryBlock = 64;
inline constexpr std::size_t kRowBlock = 64;

struct Candidate {
    float distance;
    std::size_t index;

    bool
    operator<(const Candidate& o) const {
        return distance < o.distance || (distance == o.distance && index < o.index);
    }
};

/// Bounded selection of the k best candidates, kept sorted.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) {
        items_.reserve(k);
    }

    void
    push(Candidate c) {
        if (items_.size() == k_) {
            if (!(c < items_.back())) {
                return;
            }
            items_.pop_back();
        }
        auto pos = std::upper_bound(items_.begin(), items_.end(), c);
        items_.insert(pos, c);
    }

    NeighborResult
    result() const {
        NeighborResult r;
        r.indices.reserve(items_.size());
        r.distances.reserve(items_.size());
        for (const auto& c : items_) {
            r.indices.push_back(c.index);
            r.distances.push_back(c.distance);
        }
        return r;
    }

private:
    std::size_t k_;
    std::vector<Candidate> items_;
};

inline float
distance_from_dot(float dot) {
    return std::clamp(1.0f - dot, 0.0f, 2.0f);
}

template <std::size_t Q, std::size_t R>
inline void
score_tile(const float* queries,
           std::size_t q0,
           const float* rows,
           std::size_t r0,
           std::size_t dim,
           std::vector<TopK>& best) {
    const float* qp[Q];
    const float* rp[R];
    for (std::size_t j = 0; j < Q; ++j) {
        qp[j] = queries + (q0 + j) * dim;
    }
    for (std::size_t j = 0; j < R; ++j) {
        rp[j] = rows + (r0 + j) * dim;
    }
    float scores[Q * R];
    kernels::dot_tile<Q, R>(qp, rp, dim, scores);
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t r = 0; r < R; ++r) {
            best[q0 + q].push({distance_from_dot(scores[q * R + r]), r0 + r});
        }
    }
}

/// Scans every row of `set` for the unit queries in `queries` (row-major,
/// set.dim() wide) and returns one NeighborResult per query.
inline std::vector<NeighborResult>
scan_block(std::span<const float> queries, const MatchingSet& set, std::size_t k) {
    constexpr std::size_t kTile = 4;
    const std::size_t dim = set.dim();
    const std::size_t n_queries = queries.size() / dim;
    std::vector<TopK> best(n_queries, TopK(k));
    const float* rows = set.unit_data();
    const float* qs = queries.data();

    for (std::size_t r0 = 0; r0 < set.size(); r0 += kRowBlock) {
        const std::size_t r1 = std::min(set.size(), r0 + kRowBlock);
        std::size_t q = 0;
        for (; q + kTile <= n_queries; q += kTile) {
            std::size_t r = r0;
            for (; r + kTile <= r1; r += kTile) {
                score_tile<kTile, kTile>(qs, q, rows, r, dim, best);
            }
            for (; r < r1; ++r) {
                score_tile<kTile, 1>(qs, q, rows, r, dim, best);
            }
        }
        for (; q < n_queries; ++q) {
            std::size_t r = r0;
            for (; r + kTile <= r1; r += kTile) {
                score_tile<1, kTile>(qs, q, rows, r, dim, best);
            }
            for (; r < r1; ++r) {
                score_tile<1, 1>(qs, q, rows, r, dim, best);
            }
        }
    }

    std::vector<NeighborResult> out;
    out.reserve(n_queries);
    for (const auto& b : best) {
        out.push_back(b.result());
    }
    return out;
}

inline void
check_query_dim(std::size_t query_dim, const MatchingSet& set) {
    if (query_dim != set.dim()) {
        throw Error(ErrorKind::kConfig,
                    "query dim " + std::to_string(query_dim) + " does not match matching set dim " +
                        std::to_string(set.dim()));
    }
}

}  // namespace detail

/// k nearest neighbors for every row of `queries` (row-major, set.dim()
/// wide). Query rows are normalized internally and must be nonzero.
/// Results do not depend on the worker count.
inline std::vector<NeighborResult>
top_k_neighbors_batch(std::span<const float> queries, const MatchingSet& set, const KnnConfig& config) {
    const std::size_t k = effective_k(config, set.size());
    const std::size_t dim = set.dim();
    if (queries.size() % dim != 0) {
        throw Error(ErrorKind::kConfig, "query buffer is not a whole number of dim-" + std::to_string(dim) + " rows");
    }
    const std::size_t n_queries = queries.size() / dim;

    std::vector<float> unit_queries(queries.size());
    for (std::size_t q = 0; q < n_queries; ++q) {
        normalize_into(queries.subspan(q * dim, dim), std::span<float>(unit_queries).subspan(q * dim, dim));
    }

    std::vector<NeighborResult> results(n_queries);
    const std::size_t n_blocks = (n_queries + detail::kQueryBlock - 1) / detail::kQueryBlock;
    parallel_for(n_blocks, config.workers ? config.workers : worker_count(), [&](std::size_t b) {
        const std::size_t q0 = b * detail::kQueryBlock;
        const std::size_t q1 = std::min(n_queries, q0 + detail::kQueryBlock);
        auto block = detail::scan_block(std::span<const float>(unit_queries).subspan(q0 * dim, (q1 - q0) * dim),
                                        set, k);
        std::move(block.begin(), block.end(), results.begin() + static_cast<std::ptrdiff_t>(q0));
    });
    return results;
}

inline NeighborResult
top_k_neighbors(std::span<const float> query_frame, const MatchingSet& set, const KnnConfig& config) {
    detail::check_query_dim(query_frame.size(), set);
    return std::move(top_k_neighbors_batch(query_frame, set, config).front());
}

/// Uniform mean of the raw (un-normalized) set rows at `indices`. Summed in
/// double and rounded once, so each component stays inside the min/max of
/// the averaged rows.
inline std::vector<float>
mean_of_rows(const MatchingSet& set, std::span<const std::size_t> indices) {
    std::vector<double> acc(set.dim(), 0.0);
    for (auto i : indices) {
        auto row = set.raw(i);
        for (std::size_t d = 0; d < acc.size(); ++d) {
            acc[d] += row[d];
        }
    }
    std::vector<float> out(set.dim());
    const double count = static_cast<double>(indices.size());
    for (std::size_t d = 0; d < acc.size(); ++d) {
        out[d] = static_cast<float>(acc[d] / count);
    }
    return out;
}

inline std::vector<float>
knn_regress_frame(std::span<const float> query_frame, const MatchingSet& set, const KnnConfig& config) {
    auto neighbors = top_k_neighbors(query_frame, set, config);
    return mean_of_rows(set, neighbors.indices);
}

/// Summary of the conversion parameters stored in converted-file metadata.
inline Json
conversion_metadata(const MatchingSet& set, const KnnConfig& config) {
    return Json{
        {"k", config.k},
        {"k_effective", std::min(config.k, set.size())},
        {"metric", to_string(config.metric)},
        {"weighting", to_string(config.weighting)},
        {"matching_set",
         {{"n_vectors", set.size()},
          {"n_utterances", set.utterances_present()},
          {"duration_s", set.total_duration_s()}}},
    };
}

/// Replaces every query frame with the mean of its k nearest set vectors.
/// The output keeps the query's frame count, hop and rate; its metadata is
/// the query metadata plus a "conversion" record.
inline FeatureSequence
convert_sequence(const FeatureSequence& query, const MatchingSet& set, const KnnConfig& config) {
    detail::check_query_dim(query.dim(), set);
    std::vector<float> out(query.data().size());
    if (query.n_frames() > 0) {
        auto neighbors = top_k_neighbors_batch(query.data(), set, config);
        for (std::size_t t = 0; t < neighbors.size(); ++t) {
            auto frame = mean_of_rows(set, neighbors[t].indices);
            std::copy(frame.begin(), frame.end(), out.begin() + static_cast<std::ptrdiff_t>(t * query.dim()));
        }
    } else {
        effective_k(config, set.size());
    }
    auto meta = parse_metadata(query.metadata());
    meta["conversion"] = conversion_metadata(set, config);
    FeatureFileHeader header = query.header();
    header.metadata = meta.dump();
    return FeatureSequence(std::move(header), std::move(out));
}

}  // namespace knnvc
