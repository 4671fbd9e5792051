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
#include <set>
#include <vector>

#include "knnvc/matching_set.hpp"
#include "test_util.hpp"

using namespace knnvc;
using knnvc::testing::random_sequence;

namespace {

std::multiset<std::vector<float>>
raw_multiset(const MatchingSet& set) {
    std::multiset<std::vector<float>> rows;
    for (std::size_t i = 0; i < set.size(); ++i) {
        auto r = set.raw(i);
        rows.emplace(r.begin(), r.end());
    }
    return rows;
}

ErrorKind
build_error(const std::vector<FeatureSequence>& utts) {
    try {
        build_matching_set(utts);
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected build_matching_set to throw";
    return ErrorKind::kIo;
}

// 96 utterances of 250 frames = 8 minutes at 20 ms.
std::vector<FeatureSequence>
eight_minutes(std::uint32_t dim) {
    std::vector<FeatureSequence> utts;
    for (int u = 0; u < 96; ++u) {
        utts.push_back(random_sequence(250, dim, 1000 + u, "u" + std::to_string(u)));
    }
    return utts;
}

}  // namespace

TEST(MatchingSet, SingleUtteranceProvenance) {
    auto set = build_matching_set(std::vector{random_sequence(10, 4, 1, "only")});
    ASSERT_EQ(set.size(), 10u);
    ASSERT_EQ(set.utterance_ids(), std::vector<std::string>{"only"});
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(set.sources()[i].utterance, 0u);
        EXPECT_EQ(set.sources()[i].frame, i);
    }
}

TEST(MatchingSet, DurationFollowsHop) {
    auto set = build_matching_set(std::vector{random_sequence(3, 4, 1), random_sequence(5, 4, 2)});
    EXPECT_EQ(set.size(), 8u);
    EXPECT_DOUBLE_EQ(set.total_duration_s(), 0.16);
    EXPECT_EQ(set.utterance_ids(), (std::vector<std::string>{"utt0", "utt1"}));
    EXPECT_EQ(set.sources()[3].utterance, 1u);
    EXPECT_EQ(set.sources()[3].frame, 0u);
}

TEST(MatchingSet, EightMinutesIs24000Vectors) {
    auto set = build_matching_set(eight_minutes(8));
    EXPECT_EQ(set.size(), 24000u);
    EXPECT_DOUBLE_EQ(set.total_duration_s(), 480.0);
}

TEST(MatchingSet, UnitRowsHaveUnitNormAndRawRowsAreUntouched) {
    auto utt = random_sequence(40, 33, 7);
    auto set = build_matching_set(std::vector{utt});
    for (std::size_t i = 0; i < set.size(); ++i) {
        EXPECT_NEAR(kernels::norm(set.unit(i)), 1.0, 1e-4);
        auto raw = set.raw(i);
        auto src = utt.frame(i);
        EXPECT_TRUE(std::equal(raw.begin(), raw.end(), src.begin()));
    }
}

TEST(MatchingSet, ConcatenationOrderDoesNotChangeTheMultiset) {
    auto a = random_sequence(6, 5, 1, "a");
    auto b = random_sequence(9, 5, 2, "b");
    auto ab = build_matching_set(std::vector{a, b});
    auto ba = build_matching_set(std::vector{b, a});
    EXPECT_EQ(raw_multiset(ab), raw_multiset(ba));
}

TEST(MatchingSet, Errors) {
    EXPECT_EQ(build_error({}), ErrorKind::kEmptySet);
    EXPECT_EQ(build_error({FeatureSequence::from_frames(4, {})}), ErrorKind::kEmptySet);
    EXPECT_EQ(build_error({random_sequence(2, 4, 1), random_sequence(2, 5, 2)}), ErrorKind::kConfig);
    EXPECT_EQ(build_error({random_sequence(2, 4, 1), random_sequence(2, 4, 2, "", 10)}), ErrorKind::kConfig);

    auto degenerate = FeatureSequence::from_frames(3, {1, 2, 3, 0, 0, 0});
    EXPECT_EQ(build_error({degenerate}), ErrorKind::kDegenerateFrame);
    auto tiny = FeatureSequence::from_frames(2, {1e-9f, 0.0f});
    EXPECT_EQ(build_error({tiny}), ErrorKind::kDegenerateFrame);
}

TEST(Subsample, SaturatesAtFullSet) {
    std::vector<FeatureSequence> utts;
    for (int u = 0; u < 5; ++u) {
        utts.push_back(random_sequence(10 + u, 4, u));
    }
    auto set = build_matching_set(utts);
    auto all = subsample_matching_set(set, set.total_duration_s() + 100.0, 3);
    EXPECT_EQ(all.size(), set.size());
    // Idempotent at saturation: same vector multiset.
    auto exact = subsample_matching_set(set, set.total_duration_s(), 9);
    EXPECT_EQ(raw_multiset(exact), raw_multiset(set));
}

TEST(Subsample, IsDeterministicPerSeed) {
    auto set = build_matching_set(eight_minutes(4));
    auto a = subsample_matching_set(set, 30.0, 42);
    auto b = subsample_matching_set(set, 30.0, 42);
    EXPECT_EQ(a.sources(), b.sources());
    auto c = subsample_matching_set(set, 30.0, 43);
    EXPECT_NE(a.sources(), c.sources());
}

TEST(Subsample, SelectsWholeUtterancesUntilTargetIsReached) {
    auto set = build_matching_set(eight_minutes(4));
    for (double target : {0.01, 5.0, 7.5, 12.0, 30.0}) {
        auto sub = subsample_matching_set(set, target, 5);
        // Every selected utterance is complete.
        std::map<std::uint32_t, std::size_t> frames;
        for (const auto& s : sub.sources()) {
            ++frames[s.utterance];
        }
        for (const auto& [u, n] : frames) {
            EXPECT_EQ(n, 250u);
        }
        // First prefix reaching the target: dropping one utterance falls short.
        EXPECT_GE(sub.total_duration_s(), target);
        EXPECT_LT(sub.total_duration_s() - 5.0, target);
    }
}

TEST(Subsample, SizeIsMonotoneAcrossTargetsAndNested) {
    auto set = build_matching_set(eight_minutes(4));
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        std::size_t previous = 0;
        std::set<std::pair<std::uint32_t, std::uint64_t>> previous_rows;
        for (double target : {5.0, 10.0, 30.0, 60.0, 300.0}) {
            auto sub = subsample_matching_set(set, target, seed);
            EXPECT_GE(sub.size(), previous);
            previous = sub.size();
            std::set<std::pair<std::uint32_t, std::uint64_t>> rows;
            for (const auto& s : sub.sources()) {
                rows.emplace(s.utterance, s.frame);
            }
            EXPECT_TRUE(std::includes(rows.begin(), rows.end(), previous_rows.begin(), previous_rows.end()));
            previous_rows = std::move(rows);
        }
    }
}

TEST(Subsample, RejectsNonPositiveTarget) {
    auto set = build_matching_set(std::vector{random_sequence(3, 2, 1)});
    EXPECT_THROW(subsample_matching_set(set, 0.0, 1), Error);
    EXPECT_THROW(subsample_matching_set(set, -1.0, 1), Error);
}

TEST(Subsample, KeepsUnitAndRawRowsPaired) {
    auto set = build_matching_set(eight_minutes(6));
    auto sub = subsample_matching_set(set, 20.0, 11);
    for (std::size_t i = 0; i < sub.size(); ++i) {
        auto expect = normalized(sub.raw(i));
        auto unit = sub.unit(i);
        EXPECT_TRUE(std::equal(unit.begin(), unit.end(), expect.begin()));
    }
}
