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

// Synthetic "phone-like" feature corpora for checking that kNN conversion
// keeps content while swapping speakers.
//
// Frame generation: x = c[phone] + o[speaker] + noise, where c are global
// phone centroids, o a per-speaker offset of norm speaker_shift and noise is
// isotropic Gaussian with standard deviation phone_spread.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/feature_file.hpp"
#include "knnvc/knn.hpp"
#include "knnvc/matching_set.hpp"
#include "knnvc/metadata.hpp"
#include "knnvc/parallel.hpp"

namespace knnvc::synth {

struct SynthConfig {
    std::size_t n_phones = 40;
    std::size_t dim = 64;
    std::size_t n_speakers = 4;
    std::size_t frames_per_utterance = 250;
    std::size_t utterances_per_speaker = 96;
    double phone_spread = 1.4;
    double speaker_shift = 2.0;
    std::uint64_t seed = 0;
    std::uint32_t hop_ms = kDefaultHopMs;

    void
    validate() const {
        if (n_phones < 1 || dim < 1 || n_speakers < 1 || frames_per_utterance < 1 || utterances_per_speaker < 1 ||
            hop_ms < 1) {
            throw Error(ErrorKind::kConfig, "synthetic corpus counts must all be >= 1");
        }
        if (!(phone_spread >= 0.0) || !(speaker_shift >= 0.0)) {
            throw Error(ErrorKind::kConfig, "phone_spread and speaker_shift must be >= 0");
        }
    }

    Json
    to_json() const {
        return Json{{"n_phones", n_phones},
                    {"dim", dim},
                    {"n_speakers", n_speakers},
                    {"frames_per_utterance", frames_per_utterance},
                    {"utterances_per_speaker", utterances_per_speaker},
                    {"phone_spread", phone_spread},
                    {"speaker_shift", speaker_shift},
                    {"seed", seed},
                    {"hop_ms", hop_ms}};
    }

    static SynthConfig
    from_json(const Json& j) {
        SynthConfig c;
        c.n_phones = j.value("n_phones", c.n_phones);
        c.dim = j.value("dim", c.dim);
        c.n_speakers = j.value("n_speakers", c.n_speakers);
        c.frames_per_utterance = j.value("frames_per_utterance", c.frames_per_utterance);
        c.utterances_per_speaker = j.value("utterances_per_speaker", c.utterances_per_speaker);
        c.phone_spread = j.value("phone_spread", c.phone_spread);
        c.speaker_shift = j.value("speaker_shift", c.speaker_shift);
        c.seed = j.value("seed", c.seed);
        c.hop_ms = j.value("hop_ms", c.hop_ms);
        return c;
    }
};

struct LabeledSequence {
    FeatureSequence sequence;
    std::vector<std::uint32_t> labels;
};

using Corpus = std::vector<std::vector<LabeledSequence>>;

/// splitmix64 finalizer; derives independent stream seeds.
inline std::uint64_t
mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t
derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix_seed(mix_seed(mix_seed(seed) ^ a) ^ b);
}

inline std::string
speaker_name(std::size_t s) {
    return "spk" + std::to_string(s);
}

/// Deterministic per seed regardless of worker count: each utterance draws
/// from its own derived stream.
inline Corpus
generate_corpus(const SynthConfig& config, std::size_t workers = 0) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> centroids(config.n_phones, std::vector<double>(config.dim));
    for (auto& c : centroids) {
        for (auto& x : c) {
            x = gauss(rng);
        }
    }
    std::vector<std::vector<double>> offsets(config.n_speakers, std::vector<double>(config.dim));
    for (auto& o : offsets) {
        double norm2 = 0.0;
        for (auto& x : o) {
            x = gauss(rng);
            norm2 += x * x;
        }
        const double scale = norm2 > 0.0 ? config.speaker_shift / std::sqrt(norm2) : 0.0;
        for (auto& x : o) {
            x *= scale;
        }
    }

    Corpus corpus(config.n_speakers, std::vector<LabeledSequence>(config.utterances_per_speaker));
    const std::size_t total = config.n_speakers * config.utterances_per_speaker;
    parallel_for(total, workers ? workers : worker_count(), [&](std::size_t item) {
        const std::size_t s = item / config.utterances_per_speaker;
        const std::size_t u = item % config.utterances_per_speaker;
        std::mt19937_64 urng(derive_seed(config.seed, s + 1, u + 1));
        std::normal_distribution<double> noise(0.0, 1.0);
        std::uniform_int_distribution<std::uint32_t> phone(0, static_cast<std::uint32_t>(config.n_phones - 1));

        LabeledSequence out;
        out.labels.resize(config.frames_per_utterance);
        std::vector<float> data(config.frames_per_utterance * config.dim);
        for (std::size_t t = 0; t < config.frames_per_utterance; ++t) {
            const auto p = phone(urng);
            out.labels[t] = p;
            for (std::size_t d = 0; d < config.dim; ++d) {
                const double x = centroids[p][d] + offsets[s][d] + config.phone_spread * noise(urng);
                data[t * config.dim + d] = static_cast<float>(x);
            }
        }
        Json meta{{"speaker_id", speaker_name(s)},
                  {"utterance_id", speaker_name(s) + "_utt" + std::to_string(u)},
                  {"synthetic", true}};
        out.sequence = FeatureSequence::from_frames(static_cast<std::uint32_t>(config.dim), std::move(data),
                                                    meta.dump(), config.hop_ms);
        corpus[s][u] = std::move(out);
    });
    return corpus;
}

/// A matching set together with the phone label of each of its utterances'
/// frames, addressable through row provenance.
class LabeledPool {
public:
    explicit LabeledPool(std::span<const LabeledSequence> utterances) {
        std::vector<FeatureSequence> seqs;
        seqs.reserve(utterances.size());
        for (const auto& u : utterances) {
            if (u.labels.size() != u.sequence.n_frames()) {
                throw Error(ErrorKind::kValidation, "label count differs from frame count");
            }
            seqs.push_back(u.sequence);
            labels_.push_back(u.labels);
        }
        set_ = build_matching_set(seqs);
    }

    const MatchingSet&
    set() const {
        return set_;
    }

    /// Label of row `row` of `subset`, a set derived from set() by
    /// subsampling or row selection.
    std::uint32_t
    label(const MatchingSet& subset, std::size_t row) const {
        const auto& src = subset.sources()[row];
        return labels_[src.utterance][src.frame];
    }

    /// Number of distinct labels present in `subset`.
    std::size_t
    phone_coverage(const MatchingSet& subset) const {
        std::vector<bool> seen;
        std::size_t count = 0;
        for (std::size_t r = 0; r < subset.size(); ++r) {
            const auto l = label(subset, r);
            if (l >= seen.size()) {
                seen.resize(l + 1, false);
            }
            if (!seen[l]) {
                seen[l] = true;
                ++count;
            }
        }
        return count;
    }

private:
    MatchingSet set_;
    std::vector<std::vector<std::uint32_t>> labels_;
};

/// Most frequent label among the first `k` neighbors; ties go to the lowest
/// label.
inline std::uint32_t
majority_label(const LabeledPool& pool,
               const MatchingSet& subset,
               std::span<const std::size_t> neighbors,
               std::size_t k) {
    std::map<std::uint32_t, std::size_t> votes;
    for (std::size_t i = 0; i < std::min(k, neighbors.size()); ++i) {
        ++votes[pool.label(subset, neighbors[i])];
    }
    std::uint32_t best = 0;
    std::size_t best_votes = 0;
    for (const auto& [label, n] : votes) {
        if (n > best_votes) {
            best = label;
            best_votes = n;
        }
    }
    return best;
}

struct PreservationCount {
    std::size_t correct = 0;
    std::size_t total = 0;

    double
    fraction() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

/// Label preservation of `queries` against `subset` for each k in `ks`.
/// Neighbors are searched once at the largest k; the sorted top-k list for
/// a smaller k is a prefix of it.
inline std::vector<PreservationCount>
count_preserved(std::span<const LabeledSequence> queries,
                const LabeledPool& pool,
                const MatchingSet& subset,
                std::span<const std::size_t> ks,
                const KnnConfig& base) {
    KnnConfig config = base;
    config.k = *std::max_element(ks.begin(), ks.end());
    std::vector<PreservationCount> counts(ks.size());
    for (const auto& q : queries) {
        auto neighbors = top_k_neighbors_batch(q.sequence.data(), subset, config);
        for (std::size_t t = 0; t < neighbors.size(); ++t) {
            for (std::size_t i = 0; i < ks.size(); ++i) {
                KnnConfig ki = base;
                ki.k = ks[i];
                const auto kk = effective_k(ki, subset.size());
                counts[i].correct += majority_label(pool, subset, neighbors[t].indices, kk) == q.labels[t] ? 1 : 0;
                counts[i].total += 1;
            }
        }
    }
    return counts;
}

/// Fraction of query frames whose majority neighbor label matches the
/// query's own label, with the set pooled from `set_source`.
inline double
measure_label_preservation(const LabeledSequence& query,
                           std::span<const LabeledSequence> set_source,
                           const KnnConfig& config) {
    if (query.labels.size() != query.sequence.n_frames()) {
        throw Error(ErrorKind::kValidation, "label count differs from frame count");
    }
    LabeledPool pool(set_source);
    const std::size_t ks[] = {config.k};
    return count_preserved(std::span<const LabeledSequence>(&query, 1), pool, pool.set(), ks, config)
        .front()
        .fraction();
}

struct SweepRow {
    double duration_s = 0.0;
    double preservation = 0.0;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    // Mean over target speakers.
    double n_vectors = 0.0;
    double phone_coverage = 0.0;
};

struct SweepPlan {
    std::vector<double> durations_s = {5, 10, 30, 60, 300, 480};
    std::vector<std::size_t> ks = {kDefaultK};
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    // Utterances taken from each non-target speaker as conversion sources.
    std::size_t queries_per_speaker = 2;
};

/// Duration sweep: each speaker in turn is the target; its pool is
/// subsampled to each duration under each seed and the first
/// `queries_per_speaker` utterances of every other speaker are converted
/// against it. Rows are sorted by (duration, k, seed).
inline std::vector<SweepRow>
run_preservation_sweep(const Corpus& corpus, const SweepPlan& plan, const KnnConfig& base = {}) {
    if (corpus.size() < 2) {
        throw Error(ErrorKind::kInsufficientData, "sweep needs at least two speakers");
    }
    if (plan.durations_s.empty() || plan.ks.empty() || plan.seeds.empty()) {
        throw Error(ErrorKind::kConfig, "sweep needs at least one duration, k and seed");
    }
    for (auto k : plan.ks) {
        if (k < 1) {
            throw Error(ErrorKind::kConfig, "k must be >= 1");
        }
    }

    std::vector<LabeledPool> pools;
    pools.reserve(corpus.size());
    for (const auto& speaker : corpus) {
        pools.emplace_back(speaker);
    }

    std::map<std::tuple<double, std::size_t, std::uint64_t>, SweepRow> rows;
    for (std::size_t target = 0; target < corpus.size(); ++target) {
        std::vector<LabeledSequence> queries;
        for (std::size_t s = 0; s < corpus.size(); ++s) {
            if (s == target) {
                continue;
            }
            const auto n = std::min(plan.queries_per_speaker, corpus[s].size());
            queries.insert(queries.end(), corpus[s].begin(), corpus[s].begin() + static_cast<std::ptrdiff_t>(n));
        }
        for (auto seed : plan.seeds) {
            for (auto duration : plan.durations_s) {
                auto subset = subsample_matching_set(pools[target].set(), duration, derive_seed(seed, target));
                auto counts = count_preserved(queries, pools[target], subset, plan.ks, base);
                const auto coverage = pools[target].phone_coverage(subset);
                for (std::size_t i = 0; i < plan.ks.size(); ++i) {
                    auto& row = rows[{duration, plan.ks[i], seed}];
                    row.duration_s = duration;
                    row.k = plan.ks[i];
                    row.seed = seed;
                    row.preservation += counts[i].fraction() / static_cast<double>(corpus.size());
                    row.n_vectors += static_cast<double>(subset.size()) / static_cast<double>(corpus.size());
                    row.phone_coverage += static_cast<double>(coverage) / static_cast<double>(corpus.size());
                }
            }
        }
    }

    std::vector<SweepRow> out;
    out.reserve(rows.size());
    for (auto& [key, row] : rows) {
        out.push_back(row);
    }
    return out;
}

}  // namespace knnvc::synth
