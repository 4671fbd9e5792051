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

// Word and character error rates from a unit-cost edit-distance alignment.

#include <algorithm>
#include <cctype>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/metadata.hpp"

namespace knnvc {

/// Lowercases ASCII, strips leading/trailing ASCII punctuation from each
/// whitespace-separated token and drops tokens that end up empty. Bytes
/// outside ASCII pass through untouched.
inline std::vector<std::string>
normalize_tokens(std::string_view text) {
    std::vector<std::string> tokens;
    std::istringstream in{std::string(text)};
    std::string raw;
    auto is_punct = [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u < 0x80 && std::ispunct(u);
    };
    while (in >> raw) {
        std::size_t b = 0;
        std::size_t e = raw.size();
        while (b < e && is_punct(raw[b])) {
            ++b;
        }
        while (e > b && is_punct(raw[e - 1])) {
            --e;
        }
        if (b == e) {
            continue;
        }
        std::string token = raw.substr(b, e - b);
        for (auto& c : token) {
            const auto u = static_cast<unsigned char>(c);
            if (u < 0x80) {
                c = static_cast<char>(std::tolower(u));
            }
        }
        tokens.push_back(std::move(token));
    }
    return tokens;
}

/// Splits UTF-8 text into code points (each returned as its byte string).
/// Invalid lead bytes are taken as single-byte units.
inline std::vector<std::string>
utf8_code_points(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size();) {
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (lead >= 0xF0) {
            len = 4;
        } else if (lead >= 0xE0) {
            len = 3;
        } else if (lead >= 0xC0) {
            len = 2;
        }
        len = std::min(len, text.size() - i);
        out.emplace_back(text.substr(i, len));
        i += len;
    }
    return out;
}

struct TranscriptPair {
    std::vector<std::string> reference;
    std::vector<std::string> hypothesis;

    static TranscriptPair
    from_text(std::string_view reference, std::string_view hypothesis) {
        return {normalize_tokens(reference), normalize_tokens(hypothesis)};
    }
};

struct ErrorRate {
    std::size_t edits = 0;
    std::size_t reference_length = 0;

    double
    rate() const {
        return static_cast<double>(edits) / static_cast<double>(reference_length);
    }
};

/// Minimum number of substitutions, deletions and insertions turning `ref`
/// into `hyp`.
template <typename T>
std::size_t
edit_distance(const std::vector<T>& ref, const std::vector<T>& hyp) {
    std::vector<std::size_t> prev(hyp.size() + 1);
    std::vector<std::size_t> cur(hyp.size() + 1);
    for (std::size_t j = 0; j <= hyp.size(); ++j) {
        prev[j] = j;
    }
    for (std::size_t i = 1; i <= ref.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= hyp.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
        }
        std::swap(prev, cur);
    }
    return prev[hyp.size()];
}

inline ErrorRate
word_errors(const TranscriptPair& pair) {
    if (pair.reference.empty()) {
        throw Error(ErrorKind::kValidation, "reference transcript is empty");
    }
    return {edit_distance(pair.reference, pair.hypothesis), pair.reference.size()};
}

namespace detail {

inline std::vector<std::string>
characters(const std::vector<std::string>& tokens) {
    std::string joined;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            joined.push_back(' ');
        }
        joined += tokens[i];
    }
    return utf8_code_points(joined);
}

}  // namespace detail

/// Character errors over the normalized tokens joined by single spaces.
inline ErrorRate
character_errors(const TranscriptPair& pair) {
    if (pair.reference.empty()) {
        throw Error(ErrorKind::kValidation, "reference transcript is empty");
    }
    const auto ref = detail::characters(pair.reference);
    const auto hyp = detail::characters(pair.hypothesis);
    return {edit_distance(ref, hyp), ref.size()};
}

inline double
compute_wer(const TranscriptPair& pair) {
    return word_errors(pair).rate();
}

inline double
compute_cer(const TranscriptPair& pair) {
    return character_errors(pair).rate();
}

struct TranscriptRow {
    std::string utterance_id;
    std::string reference;
    std::string hypothesis;
};

/// Reads `utterance_id<TAB>reference<TAB>hypothesis` lines. A missing third
/// field means an empty hypothesis. An optional header line naming the
/// three columns is skipped.
inline std::vector<TranscriptRow>
read_transcripts_tsv(std::istream& in) {
    std::vector<TranscriptRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line_no == 1 && line == "utterance_id\treference\thypothesis") {
            continue;
        }
        const auto t1 = line.find('\t');
        if (t1 == std::string::npos) {
            throw Error(ErrorKind::kFormat, "line " + std::to_string(line_no) + ": expected tab-separated fields");
        }
        const auto t2 = line.find('\t', t1 + 1);
        TranscriptRow row;
        row.utterance_id = line.substr(0, t1);
        if (t2 == std::string::npos) {
            row.reference = line.substr(t1 + 1);
        } else {
            row.reference = line.substr(t1 + 1, t2 - t1 - 1);
            row.hypothesis = line.substr(t2 + 1);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Per-pair W/CER plus corpus aggregates (total edits over total reference
/// length).
inline Json
score_transcripts(const std::vector<TranscriptRow>& rows) {
    Json pairs = Json::array();
    ErrorRate words_total;
    ErrorRate chars_total;
    for (const auto& row : rows) {
        const auto pair = TranscriptPair::from_text(row.reference, row.hypothesis);
        ErrorRate w;
        ErrorRate c;
        try {
            w = word_errors(pair);
            c = character_errors(pair);
        } catch (const Error& e) {
            throw Error(e.kind(), "utterance " + row.utterance_id + ": reference is empty after normalization");
        }
        words_total.edits += w.edits;
        words_total.reference_length += w.reference_length;
        chars_total.edits += c.edits;
        chars_total.reference_length += c.reference_length;
        pairs.push_back({{"utterance_id", row.utterance_id},
                         {"wer", w.rate()},
                         {"cer", c.rate()},
                         {"word_edits", w.edits},
                         {"reference_words", w.reference_length},
                         {"char_edits", c.edits},
                         {"reference_chars", c.reference_length}});
    }
    if (rows.empty()) {
        throw Error(ErrorKind::kValidation, "no transcript pairs");
    }
    return Json{{"pairs", pairs},
                {"corpus",
                 {{"wer", words_total.rate()},
                  {"cer", chars_total.rate()},
                  {"word_edits", words_total.edits},
                  {"reference_words", words_total.reference_length},
                  {"char_edits", chars_total.edits},
                  {"reference_chars", chars_total.reference_length}}}};
}

}  // namespace knnvc
