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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "knnvc/knn.hpp"
#include "test_util.hpp"

using namespace knnvc;
using knnvc::testing::knn_oracle;
using knnvc::testing::random_sequence;
using knnvc::testing::random_values;
using knnvc::testing::within_envelope;

namespace {

MatchingSet
set_from_rows(std::uint32_t dim, std::vector<float> rows) {
    return build_matching_set(std::vector{FeatureSequence::from_frames(dim, std::move(rows))});
}

KnnConfig
with_k(std::size_t k) {
    KnnConfig c;
    c.k = k;
    return c;
}

}  // namespace

TEST(CosineDistance, TrivialCases) {
    auto a = normalized(std::vector<float>{0.3f, -1.2f, 2.0f, 0.5f});
    std::vector<float> neg(a.size());
    std::transform(a.begin(), a.end(), neg.begin(), [](float x) { return -x; });
    EXPECT_NEAR(cosine_distance(a, a), 0.0f, 1e-6);
    EXPECT_NEAR(cosine_distance(a, neg), 2.0f, 1e-6);
    std::vector<float> e0 = {1, 0, 0}, e1 = {0, 1, 0};
    EXPECT_EQ(cosine_distance(e0, e1), 1.0f);
    auto b = normalized(std::vector<float>{1.0f, 0.1f, -0.4f, 0.9f});
    EXPECT_EQ(cosine_distance(a, b), cosine_distance(b, a));
}

TEST(CosineDistance, DimensionMismatchIsConfigError) {
    std::vector<float> a = {1, 0}, b = {1, 0, 0};
    try {
        cosine_distance(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    }
}

TEST(TopK, ExactMemberQuery) {
    auto rows = random_values(20 * 8, 3);
    auto set = set_from_rows(8, rows);
    for (std::size_t j : {0u, 7u, 19u}) {
        auto r = top_k_neighbors(set.raw(j), set, with_k(1));
        ASSERT_EQ(r.indices.size(), 1u);
        EXPECT_EQ(r.indices[0], j);
        EXPECT_NEAR(r.distances[0], 0.0f, 1e-6);
    }
}

TEST(TopK, IdenticalRowsBreakTiesByIndex) {
    std::vector<float> rows;
    for (int i = 0; i < 6; ++i) {
        rows.insert(rows.end(), {0.5f, -1.0f, 2.0f});
    }
    auto set = set_from_rows(3, rows);
    auto r = top_k_neighbors(std::vector<float>{1.0f, 1.0f, 0.0f}, set, with_k(3));
    EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(r.distances[0], r.distances[1]);
    EXPECT_EQ(r.distances[1], r.distances[2]);
}

TEST(TopK, MatchesFullSortOracle200x16) {
    auto set = set_from_rows(16, random_values(200 * 16, 11));
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto query = random_values(16, 500 + s);
        auto got = top_k_neighbors(query, set, with_k(8));
        auto want = knn_oracle(query, set, 8);
        EXPECT_EQ(got.indices, want.indices);
        EXPECT_EQ(got.distances, want.distances);
    }
}

TEST(TopK, RandomizedOracleEquivalence) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        const auto dim = static_cast<std::uint32_t>(std::uniform_int_distribution<int>(1, 64)(rng));
        const auto n = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 500)(rng));
        const auto k = static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 16)(rng));
        auto set = set_from_rows(dim, random_values(n * dim, rng()));
        auto queries = random_values(5 * dim, rng());
        auto batch = top_k_neighbors_batch(queries, set, with_k(k));
        for (std::size_t q = 0; q < 5; ++q) {
            std::span<const float> query(queries.data() + q * dim, dim);
            auto want = knn_oracle(query, set, k);
            ASSERT_EQ(batch[q].indices, want.indices) << "trial " << trial;
            auto mean = knn_regress_frame(query, set, with_k(k));
            for (std::size_t d = 0; d < dim; ++d) {
                const double expect = static_cast<double>(want.mean[d]);
                EXPECT_LE(std::abs(mean[d] - expect), 1e-5 * std::max(1.0, std::abs(expect)));
            }
        }
    }
}

TEST(TopK, AgreesWithDoublePrecisionDistancesUpToNearTies) {
    const std::uint32_t dim = 48;
    auto rows = random_values(300 * dim, 77);
    auto set = set_from_rows(dim, rows);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto query = random_values(dim, 900 + s);
        auto got = top_k_neighbors(query, set, with_k(10));
        // Distances computed entirely in double from the raw vectors.
        std::vector<std::pair<double, std::size_t>> exact;
        double qn = 0;
        for (float x : query) {
            qn += double(x) * x;
        }
        for (std::size_t i = 0; i < set.size(); ++i) {
            auto r = set.raw(i);
            double dot = 0, rn = 0;
            for (std::size_t d = 0; d < dim; ++d) {
                dot += double(query[d]) * r[d];
                rn += double(r[d]) * r[d];
            }
            exact.emplace_back(1.0 - dot / std::sqrt(qn * rn), i);
        }
        std::sort(exact.begin(), exact.end());
        for (std::size_t j = 0; j < 10; ++j) {
            EXPECT_NEAR(got.distances[j], exact[j].first, 1e-5);
            if (got.indices[j] != exact[j].second) {
                // Only acceptable when the double-precision gap is a rounding-level tie.
                const double gap = std::abs(exact[j].first - exact[j + 1].first);
                EXPECT_LT(gap, 1e-5);
            }
        }
    }
}

TEST(TopK, OverflowClampsOrErrors) {
    auto set = set_from_rows(4, random_values(3 * 4, 5));
    auto r = top_k_neighbors(random_values(4, 6), set, with_k(10));
    EXPECT_EQ(r.indices.size(), 3u);
    KnnConfig strict = with_k(10);
    strict.k_overflow = KOverflow::kError;
    try {
        top_k_neighbors(random_values(4, 6), set, strict);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kInsufficientData);
    }
}

TEST(TopK, ErrorPaths) {
    MatchingSet empty;
    try {
        top_k_neighbors(std::vector<float>{}, empty, with_k(1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kEmptySet);
    }
    auto set = set_from_rows(4, random_values(8, 1));
    EXPECT_THROW(top_k_neighbors(std::vector<float>{1, 2, 3}, set, with_k(1)), Error);
    try {
        top_k_neighbors(std::vector<float>{0, 0, 0, 0}, set, with_k(1));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kDegenerateFrame);
    }
    EXPECT_THROW(top_k_neighbors(random_values(4, 2), set, with_k(0)), Error);
}

TEST(TopK, ScalingRowsKeepsSelectedIndices) {
    const std::uint32_t dim = 16;
    auto rows = random_values(150 * dim, 21);
    auto scaled = rows;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> scale(0.1f, 10.0f);
    for (std::size_t i = 0; i < 150; ++i) {
        const float s = scale(rng);
        for (std::size_t d = 0; d < dim; ++d) {
            scaled[i * dim + d] *= s;
        }
    }
    auto a = set_from_rows(dim, rows);
    auto b = set_from_rows(dim, scaled);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto q = random_values(dim, 40 + s);
        EXPECT_EQ(top_k_neighbors(q, a, with_k(6)).indices, top_k_neighbors(q, b, with_k(6)).indices);
    }
}

TEST(TopK, PermutingRowsPermutesIndices) {
    const std::uint32_t dim = 12;
    const std::size_t n = 120;
    auto rows = random_values(n * dim, 31);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(8));
    // permuted row p holds original row perm[p]
    std::vector<float> permuted(rows.size());
    for (std::size_t p = 0; p < n; ++p) {
        std::copy_n(rows.begin() + perm[p] * dim, dim, permuted.begin() + p * dim);
    }
    auto a = set_from_rows(dim, rows);
    auto b = set_from_rows(dim, permuted);
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto q = random_values(dim, 70 + s);
        auto ra = top_k_neighbors(q, a, with_k(5));
        auto rb = top_k_neighbors(q, b, with_k(5));
        std::vector<std::size_t> mapped;
        for (auto i : rb.indices) {
            mapped.push_back(perm[i]);
        }
        EXPECT_EQ(mapped, ra.indices);
        EXPECT_EQ(knn_regress_frame(q, a, with_k(5)), knn_regress_frame(q, b, with_k(5)));
    }
}

TEST(Regress, ExactMemberWithKOneReturnsRawVector) {
    auto rows = random_values(30 * 6, 4, -5.0f, 5.0f);
    auto set = set_from_rows(6, rows);
    auto out = knn_regress_frame(set.raw(12), set, with_k(1));
    auto raw = set.raw(12);
    EXPECT_TRUE(std::equal(out.begin(), out.end(), raw.begin()));
}

TEST(Regress, IdenticalRowsReturnThatRow) {
    std::vector<float> v = {0.1f, -3.7f, 2.25f};
    std::vector<float> rows;
    for (int i = 0; i < 7; ++i) {
        rows.insert(rows.end(), v.begin(), v.end());
    }
    auto set = set_from_rows(3, rows);
    for (std::size_t k : {1u, 3u, 7u, 9u}) {
        EXPECT_EQ(knn_regress_frame(std::vector<float>{1, 1, 1}, set, with_k(k)), v);
    }
}

TEST(Regress, TwoDimensionalWorkedExample) {
    auto set = set_from_rows(2, {1, 0, 0, 1, -1, 0});
    auto query = normalized(std::vector<float>{1.0f, 0.1f});
    // Ranking by direct computation of all three distances.
    const double n = std::sqrt(1.01);
    const double d0 = 1 - 1 / n, d1 = 1 - 0.1 / n, d2 = 1 + 1 / n;
    ASSERT_LT(d0, d1);
    ASSERT_LT(d1, d2);
    auto r = top_k_neighbors(query, set, with_k(2));
    EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 1}));
    EXPECT_NEAR(r.distances[0], d0, 1e-6);
    EXPECT_NEAR(r.distances[1], d1, 1e-6);
    EXPECT_EQ(knn_regress_frame(query, set, with_k(2)), (std::vector<float>{0.5f, 0.5f}));
}

TEST(Convert, EmptyQueryGivesEmptyOutput) {
    auto set = set_from_rows(4, random_values(40, 1));
    auto out = convert_sequence(FeatureSequence::from_frames(4, {}), set, KnnConfig{});
    EXPECT_EQ(out.n_frames(), 0u);
    EXPECT_EQ(out.dim(), 4u);
}

TEST(Convert, SelfReconstructionWithKOne) {
    auto query = random_sequence(60, 24, 9, "self");
    auto set = build_matching_set(std::vector{query});
    auto out = convert_sequence(query, set, with_k(1));
    ASSERT_EQ(out.n_frames(), query.n_frames());
    for (std::size_t i = 0; i < out.data().size(); ++i) {
        EXPECT_NEAR(out.data()[i], query.data()[i], 1e-6);
    }
}

TEST(Convert, LargeSetKeepsFrameCountAndEnvelope) {
    std::vector<FeatureSequence> refs;
    for (int u = 0; u < 96; ++u) {
        refs.push_back(random_sequence(250, 32, 300 + u));
    }
    auto set = build_matching_set(refs);
    ASSERT_EQ(set.size(), 24000u);
    // Source frames deliberately outside the reference value range.
    auto query = FeatureSequence::from_frames(32, random_values(500 * 32, 5, -3.0f, 3.0f));
    auto out = convert_sequence(query, set, KnnConfig{});
    EXPECT_EQ(out.n_frames(), 500u);
    EXPECT_TRUE(within_envelope(out, set));
}

TEST(Convert, MetadataRecordsConversion) {
    auto query = random_sequence(5, 4, 1, "src");
    auto set = build_matching_set(std::vector{random_sequence(9, 4, 2, "ref_a"), random_sequence(3, 4, 3, "ref_b")});
    auto out = convert_sequence(query, set, with_k(2));
    auto meta = parse_metadata(out.metadata());
    EXPECT_EQ(meta["utterance_id"], "src");
    EXPECT_EQ(meta["conversion"]["k"], 2);
    EXPECT_EQ(meta["conversion"]["metric"], "cosine");
    EXPECT_EQ(meta["conversion"]["matching_set"]["n_vectors"], 12);
    EXPECT_EQ(meta["conversion"]["matching_set"]["n_utterances"], 2);
    EXPECT_EQ(out.header().hop_ms, query.header().hop_ms);
}

TEST(Convert, DimensionMismatchIsConfigError) {
    auto set = set_from_rows(4, random_values(40, 1));
    try {
        convert_sequence(random_sequence(3, 5, 1), set, KnnConfig{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kConfig);
    }
}

TEST(Convert, IndependentOfWorkerCount) {
    auto set = set_from_rows(20, random_values(700 * 20, 12));
    auto query = random_sequence(333, 20, 13);
    KnnConfig one = with_k(4);
    one.workers = 1;
    KnnConfig many = with_k(4);
    many.workers = 5;
    auto a = convert_sequence(query, set, one);
    auto b = convert_sequence(query, set, many);
    EXPECT_EQ(a, b);
    EXPECT_EQ(top_k_neighbors_batch(query.data(), set, one), top_k_neighbors_batch(query.data(), set, many));
}
