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

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "knnvc/eer.hpp"
#include "test_util.hpp"

using namespace knnvc;
using knnvc::testing::eer_bruteforce;

namespace {

TrialSet
trials(const std::vector<double>& positives, const std::vector<double>& negatives) {
    TrialSet set;
    for (double s : positives) {
        set.trials.push_back({s, 1});
    }
    for (double s : negatives) {
        set.trials.push_back({s, 0});
    }
    return set;
}

TrialSet
random_trials(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> count(1, 40);
    std::normal_distribution<double> pos(0.6, 0.2), neg(0.3, 0.2);
    std::uniform_int_distribution<int> coarse(0, 20);
    std::vector<double> p, n;
    const bool quantize = rng() % 2 == 0;  // half the sets have many ties
    for (int i = count(rng); i > 0; --i) {
        p.push_back(quantize ? coarse(rng) / 20.0 : pos(rng));
    }
    for (int i = count(rng); i > 0; --i) {
        n.push_back(quantize ? coarse(rng) / 20.0 : neg(rng));
    }
    return trials(p, n);
}

}  // namespace

TEST(CosineScores, TrivialCases) {
    std::vector<std::vector<float>> a = {{1, 2, 3}, {1, 0}, {0.5f, -1}};
    std::vector<std::vector<float>> b = {{1, 2, 3}, {0, 4}, {1, -2}};
    auto s = cosine_similarity_scores(a, b);
    EXPECT_NEAR(s[0], 1.0, 1e-12);
    EXPECT_EQ(s[1], 0.0);
    EXPECT_NEAR(s[2], 1.0, 1e-12);
}

TEST(CosineScores, Errors) {
    std::vector<std::vector<float>> a = {{0, 0}};
    std::vector<std::vector<float>> b = {{1, 0}};
    try {
        cosine_similarity_scores(a, b);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kDegenerateFrame);
    }
    std::vector<std::vector<float>> c = {{1, 0}, {0, 1}};
    EXPECT_THROW(cosine_similarity_scores(b, c), Error);
}

TEST(Eer, SeparableIsZero) {
    auto r = compute_eer(trials({0.9, 0.8}, {0.2, 0.1}));
    EXPECT_EQ(r.eer, 0.0);
    EXPECT_EQ(r.threshold, 0.8);
}

TEST(Eer, IdenticalMultisetsIsOneHalf) {
    EXPECT_EQ(compute_eer(trials({0.1, 0.2}, {0.2, 0.1})).eer, 0.5);
    EXPECT_EQ(compute_eer(trials({0.1, 0.2, 0.3}, {0.3, 0.2, 0.1})).eer, 0.5);
    EXPECT_EQ(compute_eer(trials({0.4, 0.4, 0.4}, {0.4, 0.4, 0.4})).eer, 0.5);
}

TEST(Eer, WorkedExampleMatchesBruteForce) {
    auto set = trials({0.7, 0.6, 0.4}, {0.5, 0.3, 0.2});
    auto oracle = eer_bruteforce(set.trials);
    // Sweep by hand: at 0.5, FAR = 1/3 (0.5 accepted), FRR = 1/3 (0.4 rejected).
    EXPECT_DOUBLE_EQ(oracle.eer, 1.0 / 3.0);
    EXPECT_EQ(oracle.threshold, 0.5);
    auto r = compute_eer(set);
    EXPECT_DOUBLE_EQ(r.eer, oracle.eer);
    EXPECT_EQ(r.threshold, oracle.threshold);
    EXPECT_DOUBLE_EQ(r.far_at_threshold, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.frr_at_threshold, 1.0 / 3.0);
}

TEST(Eer, RandomSetsMatchBruteForce) {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 200; ++i) {
        auto set = random_trials(rng);
        auto oracle = eer_bruteforce(set.trials);
        auto r = compute_eer(set);
        EXPECT_EQ(r.eer, oracle.eer);
        EXPECT_EQ(r.threshold, oracle.threshold);
    }
}

TEST(Eer, BoundsAndZeroIffSeparable) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        auto set = random_trials(rng);
        auto r = compute_eer(set);
        EXPECT_GE(r.eer, 0.0);
        EXPECT_LE(r.eer, 1.0);
        double min1 = 1e9, max0 = -1e9;
        for (const auto& t : set.trials) {
            (t.label ? min1 : max0) = t.label ? std::min(min1, t.score) : std::max(max0, t.score);
        }
        EXPECT_EQ(r.eer == 0.0, min1 > max0);
    }
}

TEST(Eer, InvariantUnderStrictlyIncreasingTransforms) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 100; ++i) {
        auto set = random_trials(rng);
        auto base = compute_eer(set);
        for (auto f : {+[](double x) { return 3.0 * x - 7.0; }, +[](double x) { return std::exp(x); },
                       +[](double x) { return x * x * x; }}) {
            auto t = set;
            for (auto& tr : t.trials) {
                tr.score = f(tr.score);
            }
            EXPECT_EQ(compute_eer(t).eer, base.eer);
        }
    }
}

TEST(Eer, SingleLabelIsValidationError) {
    try {
        compute_eer(trials({0.1, 0.2}, {}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    }
    EXPECT_THROW(compute_eer(trials({}, {0.3})), Error);
    EXPECT_THROW(compute_eer(trials({NAN}, {0.3})), Error);
}

TEST(TrialCsv, ParsesContract) {
    std::istringstream in("score,label\n0.9,1\n0.25,0\r\n\n-1e-3,0\n");
    auto set = read_trials_csv(in);
    ASSERT_EQ(set.trials.size(), 3u);
    EXPECT_EQ(set.trials[0].label, 1);
    EXPECT_DOUBLE_EQ(set.trials[2].score, -1e-3);
}

TEST(TrialCsv, RejectsMalformedInput) {
    for (const char* text : {"", "s,l\n0.1,1\n", "score,label\n0.1\n", "score,label\nabc,1\n",
                             "score,label\n0.1,2\n", "score,label\n0.1x,1\n"}) {
        std::istringstream in(text);
        EXPECT_THROW(read_trials_csv(in), Error) << text;
    }
}
