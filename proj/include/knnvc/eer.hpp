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

// Equal error rate over speaker-verification trials.
//
// Label 1 marks a ground-truth same-speaker pair, label 0 a pair containing
// converted speech. A trial is accepted as ground truth when its score is
// at or above the threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/metadata.hpp"

namespace knnvc {

struct Trial {
    double score = 0.0;
    int label = 0;
};

struct TrialSet {
    std::vector<Trial> trials;

    void
    validate() const {
        bool has0 = false;
        bool has1 = false;
        for (const auto& t : trials) {
            if (!std::isfinite(t.score)) {
                throw Error(ErrorKind::kValidation, "non-finite trial score");
            }
            if (t.label != 0 && t.label != 1) {
                throw Error(ErrorKind::kValidation, "trial label must be 0 or 1");
            }
            (t.label == 1 ? has1 : has0) = true;
        }
        if (!has0 || !has1) {
            throw Error(ErrorKind::kValidation, "EER needs at least one trial of each label");
        }
    }
};

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
    double far_at_threshold = 0.0;
    double frr_at_threshold = 0.0;

    Json
    to_json() const {
        return Json{{"eer", eer},
                    {"threshold", threshold},
                    {"far_at_threshold", far_at_threshold},
                    {"frr_at_threshold", frr_at_threshold}};
    }
};

/// Element-wise cosine similarity of paired embeddings.
inline std::vector<double>
cosine_similarity_scores(std::span<const std::vector<float>> a, std::span<const std::vector<float>> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorKind::kConfig, "embedding lists differ in length");
    }
    std::vector<double> scores;
    scores.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) {
            throw Error(ErrorKind::kConfig, "embedding pair " + std::to_string(i) + " differs in dim");
        }
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (std::size_t d = 0; d < a[i].size(); ++d) {
            dot += static_cast<double>(a[i][d]) * b[i][d];
            na += static_cast<double>(a[i][d]) * a[i][d];
            nb += static_cast<double>(b[i][d]) * b[i][d];
        }
        if (na == 0.0 || nb == 0.0) {
            throw Error(ErrorKind::kDegenerateFrame, "zero-norm embedding in pair " + std::to_string(i));
        }
        scores.push_back(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0));
    }
    return scores;
}

/// Sweeps every distinct score as a threshold and returns the one that
/// minimizes |FAR - FRR| (lowest threshold on ties). Rate differences are
/// compared exactly in integer arithmetic, so the result depends only on
/// the order of the scores.
inline EerResult
compute_eer(const TrialSet& set) {
    set.validate();
    std::vector<Trial> sorted = set.trials;
    std::sort(sorted.begin(), sorted.end(), [](const Trial& x, const Trial& y) { return x.score < y.score; });

    std::int64_t n1 = 0;
    for (const auto& t : sorted) {
        n1 += t.label;
    }
    const std::int64_t n0 = static_cast<std::int64_t>(sorted.size()) - n1;

    // Below the current threshold: label-1 trials are rejected (FRR) and
    // label-0 trials are not accepted.
    std::int64_t rejected1 = 0;
    std::int64_t rejected0 = 0;
    std::int64_t best_gap = -1;
    EerResult best;
    for (std::size_t i = 0; i < sorted.size();) {
        const double threshold = sorted[i].score;
        const std::int64_t accepted0 = n0 - rejected0;
        // FAR - FRR = accepted0/n0 - rejected1/n1, scaled by n0*n1.
        const std::int64_t gap = std::llabs(accepted0 * n1 - rejected1 * n0);
        if (best_gap < 0 || gap < best_gap) {
            best_gap = gap;
            best.threshold = threshold;
            best.far_at_threshold = static_cast<double>(accepted0) / static_cast<double>(n0);
            best.frr_at_threshold = static_cast<double>(rejected1) / static_cast<double>(n1);
        }
        for (; i < sorted.size() && sorted[i].score == threshold; ++i) {
            (sorted[i].label == 1 ? rejected1 : rejected0) += 1;
        }
    }
    best.eer = (best.far_at_threshold + best.frr_at_threshold) / 2.0;
    return best;
}

/// Reads the `score,label` CSV trial contract.
inline TrialSet
read_trials_csv(std::istream& in) {
    TrialSet set;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            if (line != "score,label") {
                throw Error(ErrorKind::kFormat, "trial CSV must start with the header 'score,label'");
            }
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw Error(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": expected score,label");
        }
        Trial t;
        try {
            std::size_t used = 0;
            const std::string score_text = line.substr(0, comma);
            t.score = std::stod(score_text, &used);
            if (used != score_text.size()) {
                throw std::invalid_argument(score_text);
            }
        } catch (const std::exception&) {
            throw Error(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": bad score");
        }
        const std::string label = line.substr(comma + 1);
        if (label != "0" && label != "1") {
            throw Error(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": label must be 0 or 1");
        }
        t.label = label == "1" ? 1 : 0;
        set.trials.push_back(t);
    }
    if (!header_seen) {
        throw Error(ErrorKind::kFormat, "trial CSV is empty");
    }
    return set;
}

}  // namespace knnvc
