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

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/feature_file.hpp"
#include "knnvc/kernels.hpp"
#include "knnvc/metadata.hpp"

namespace knnvc {

inline constexpr double kDegenerateNorm = 1e-8;

class MatchingSet;

inline MatchingSet
build_matching_set(std::span<const FeatureSequence> utterances);

/// Where a matching-set vector came from.
struct FrameSource {
    std::uint32_t utterance = 0;  // index into MatchingSet::utterance_ids()
    std::uint64_t frame = 0;

    bool
    operator==(const FrameSource&) const = default;
};

/// Order-free pool of target-speaker vectors. Raw rows feed the regression
/// average; unit rows make cosine distance a single dot product.
///
/// Immutable once built, so it can be shared across threads.
class MatchingSet {
public:
    std::uint32_t
    dim() const {
        return dim_;
    }

    std::size_t
    size() const {
        return sources_.size();
    }

    bool
    empty() const {
        return sources_.empty();
    }

    std::span<const float>
    raw(std::size_t i) const {
        return {vectors_.data() + i * dim_, dim_};
    }

    std::span<const float>
    unit(std::size_t i) const {
        return {unit_vectors_.data() + i * dim_, dim_};
    }

    const float*
    unit_data() const {
        return unit_vectors_.data();
    }

    const std::vector<FrameSource>&
    sources() const {
        return sources_;
    }

    const std::vector<std::string>&
    utterance_ids() const {
        return utterance_ids_;
    }

    std::uint32_t
    hop_ms() const {
        return hop_ms_;
    }

    std::uint32_t
    sample_rate_hz() const {
        return sample_rate_hz_;
    }

    double
    total_duration_s() const {
        return static_cast<double>(size()) * hop_ms_ / 1000.0;
    }

    /// Number of distinct utterances that contribute at least one row.
    std::size_t
    utterances_present() const {
        std::vector<bool> seen(utterance_ids_.size(), false);
        std::size_t count = 0;
        for (const auto& s : sources_) {
            if (!seen[s.utterance]) {
                seen[s.utterance] = true;
                ++count;
            }
        }
        return count;
    }

    /// Rows `rows` of this set, in the given order. The utterance table is
    /// shared with the parent so provenance stays comparable.
    MatchingSet
    select_rows(std::span<const std::size_t> rows) const {
        MatchingSet out;
        out.dim_ = dim_;
        out.hop_ms_ = hop_ms_;
        out.sample_rate_hz_ = sample_rate_hz_;
        out.utterance_ids_ = utterance_ids_;
        out.vectors_.reserve(rows.size() * dim_);
        out.unit_vectors_.reserve(rows.size() * dim_);
        out.sources_.reserve(rows.size());
        for (std::size_t r : rows) {
            auto v = raw(r);
            auto u = unit(r);
            out.vectors_.insert(out.vectors_.end(), v.begin(), v.end());
            out.unit_vectors_.insert(out.unit_vectors_.end(), u.begin(), u.end());
            out.sources_.push_back(sources_[r]);
        }
        return out;
    }

    friend MatchingSet
    build_matching_set(std::span<const FeatureSequence> utterances);

private:
    std::uint32_t dim_ = 0;
    std::uint32_t hop_ms_ = kDefaultHopMs;
    std::uint32_t sample_rate_hz_ = kDefaultSampleRateHz;
    std::vector<float> vectors_;
    std::vector<float> unit_vectors_;
    std::vector<FrameSource> sources_;
    std::vector<std::string> utterance_ids_;
};

/// Scales `v` to unit length into `out`. Throws on a (near-)zero vector.
inline void
normalize_into(std::span<const float> v, std::span<float> out) {
    const double n = kernels::norm(v);
    if (!(n >= kDegenerateNorm)) {
        throw Error(ErrorKind::kDegenerateFrame, "frame norm " + std::to_string(n) + " is below 1e-8");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = static_cast<float>(v[i] / n);
    }
}

inline std::vector<float>
normalized(std::span<const float> v) {
    std::vector<float> out(v.size());
    normalize_into(v, out);
    return out;
}

/// Pools every frame of `utterances` into one matching set. Utterance ids
/// come from the `utterance_id` metadata field, falling back to "utt<i>".
inline MatchingSet
build_matching_set(std::span<const FeatureSequence> utterances) {
    std::size_t total = 0;
    for (const auto& u : utterances) {
        total += u.n_frames();
    }
    if (utterances.empty() || total == 0) {
        throw Error(ErrorKind::kEmptySet, "matching set needs at least one frame");
    }

    const auto& first = utterances.front().header();
    MatchingSet set;
    set.dim_ = first.dim;
    set.hop_ms_ = first.hop_ms;
    set.sample_rate_hz_ = first.sample_rate_hz;
    set.vectors_.resize(total * set.dim_);
    set.unit_vectors_.resize(total * set.dim_);
    set.sources_.reserve(total);
    set.utterance_ids_.reserve(utterances.size());

    std::size_t row = 0;
    for (std::size_t u = 0; u < utterances.size(); ++u) {
        const auto& seq = utterances[u];
        const auto& h = seq.header();
        if (h.dim != set.dim_ || h.hop_ms != set.hop_ms_ || h.sample_rate_hz != set.sample_rate_hz_) {
            throw Error(ErrorKind::kConfig,
                        "utterance " + std::to_string(u) + " has dim/hop/rate " + std::to_string(h.dim) + "/" +
                            std::to_string(h.hop_ms) + "/" + std::to_string(h.sample_rate_hz) + ", expected " +
                            std::to_string(set.dim_) + "/" + std::to_string(set.hop_ms_) + "/" +
                            std::to_string(set.sample_rate_hz_));
        }
        set.utterance_ids_.push_back(
            metadata_string(seq.metadata(), "utterance_id").value_or("utt" + std::to_string(u)));
        for (std::size_t t = 0; t < seq.n_frames(); ++t, ++row) {
            auto frame = seq.frame(t);
            std::span<float> raw_row(set.vectors_.data() + row * set.dim_, set.dim_);
            std::span<float> unit_row(set.unit_vectors_.data() + row * set.dim_, set.dim_);
            std::copy(frame.begin(), frame.end(), raw_row.begin());
            try {
                normalize_into(frame, unit_row);
            } catch (const Error&) {
                throw Error(ErrorKind::kDegenerateFrame,
                            "utterance " + set.utterance_ids_.back() + " frame " + std::to_string(t) +
                                " has norm below 1e-8");
            }
            set.sources_.push_back({static_cast<std::uint32_t>(u), t});
        }
    }
    return set;
}

inline MatchingSet
build_matching_set(const std::vector<FeatureSequence>& utterances) {
    return build_matching_set(std::span<const FeatureSequence>(utterances));
}

/// Draws whole utterances in a seeded random order and keeps the shortest
/// prefix of that order whose duration reaches `target_duration_s`.
///
/// For a fixed seed the draw order does not depend on the target, so a
/// smaller target always yields a subset of a larger one. Rows keep their
/// original relative order.
inline MatchingSet
subsample_matching_set(const MatchingSet& set, double target_duration_s, std::uint64_t seed) {
    if (!(target_duration_s > 0.0)) {
        throw Error(ErrorKind::kConfig, "target duration must be > 0");
    }
    const std::size_t n_utts = set.utterance_ids().size();
    std::vector<std::size_t> frames_per_utt(n_utts, 0);
    for (const auto& s : set.sources()) {
        ++frames_per_utt[s.utterance];
    }
    std::vector<std::uint32_t> present;
    for (std::uint32_t u = 0; u < n_utts; ++u) {
        if (frames_per_utt[u] > 0) {
            present.push_back(u);
        }
    }

    std::mt19937_64 rng(seed);
    std::shuffle(present.begin(), present.end(), rng);

    std::vector<bool> keep(n_utts, false);
    std::size_t kept_frames = 0;
    for (auto u : present) {
        if (static_cast<double>(kept_frames) * set.hop_ms() / 1000.0 >= target_duration_s) {
            break;
        }
        keep[u] = true;
        kept_frames += frames_per_utt[u];
    }

    std::vector<std::size_t> rows;
    rows.reserve(kept_frames);
    for (std::size_t r = 0; r < set.size(); ++r) {
        if (keep[set.sources()[r].utterance]) {
            rows.push_back(r);
        }
    }
    return set.select_rows(rows);
}

}  // namespace knnvc
