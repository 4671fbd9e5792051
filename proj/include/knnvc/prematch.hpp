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

// Prematched vocoder training data: every training utterance is rebuilt by
// kNN regression against the other utterances of the same speaker.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knnvc/error.hpp"
#include "knnvc/feature_file.hpp"
#include "knnvc/knn.hpp"
#include "knnvc/matching_set.hpp"
#include "knnvc/metadata.hpp"
#include "knnvc/parallel.hpp"

namespace knnvc {

inline FeatureSequence
prematch_utterance(const FeatureSequence& query,
                   std::span<const FeatureSequence> other_utterances,
                   const KnnConfig& config) {
    if (other_utterances.empty()) {
        throw Error(ErrorKind::kInsufficientData, "prematching needs at least one other utterance");
    }
    auto set = build_matching_set(other_utterances);
    auto out = convert_sequence(query, set, config);
    auto meta = parse_metadata(out.metadata());
    meta["prematched"] = true;
    out.set_metadata(meta.dump());
    return out;
}

struct PrematchJob {
    // std::map keeps speakers in a stable, sorted order.
    std::map<std::string, std::vector<std::filesystem::path>> speakers;
    std::filesystem::path output_dir;
    KnnConfig config;
    std::size_t min_utterances_per_speaker = 2;
};

struct SkippedSpeaker {
    std::string speaker;
    std::size_t usable_utterances = 0;
    std::string reason;
};

struct FileFailure {
    std::string speaker;
    std::filesystem::path path;
    std::string error;
};

struct SpeakerTiming {
    std::string speaker;
    std::size_t utterances = 0;
    double seconds = 0.0;
};

struct JobReport {
    std::size_t processed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    std::size_t clamped = 0;  // utterances whose set was smaller than k
    std::vector<SkippedSpeaker> skipped_speakers;
    std::vector<FileFailure> failures;
    std::vector<SpeakerTiming> timings;
    std::vector<std::filesystem::path> outputs;

    Json
    to_json(bool include_timings = true) const {
        Json j;
        j["processed"] = processed;
        j["skipped"] = skipped;
        j["failed"] = failed;
        j["clamped"] = clamped;
        j["skipped_speakers"] = Json::array();
        for (const auto& s : skipped_speakers) {
            j["skipped_speakers"].push_back(
                {{"speaker", s.speaker}, {"usable_utterances", s.usable_utterances}, {"reason", s.reason}});
        }
        j["failures"] = Json::array();
        for (const auto& f : failures) {
            j["failures"].push_back({{"speaker", f.speaker}, {"path", f.path.string()}, {"error", f.error}});
        }
        if (include_timings) {
            j["speakers"] = Json::array();
            for (const auto& t : timings) {
                j["speakers"].push_back({{"speaker", t.speaker}, {"utterances", t.utterances}, {"seconds", t.seconds}});
            }
        }
        return j;
    }
};

/// Raised when no speaker could be prematched; carries the report so the
/// caller can still see why each speaker was skipped.
class PrematchJobError : public Error {
public:
    explicit PrematchJobError(JobReport report)
        : Error(ErrorKind::kInsufficientData, "no speaker has enough readable utterances to prematch"),
          report_(std::move(report)) {
    }

    const JobReport&
    report() const {
        return report_;
    }

private:
    JobReport report_;
};

/// Parses a job manifest of the form
///   {"speakers": {"<id>": ["a.kvcf", ...]}, "output_dir": "...",
///    "k": 4, "min_utterances_per_speaker": 2}
/// Relative paths resolve against `base_dir`.
inline PrematchJob
parse_prematch_manifest(const Json& manifest, const std::filesystem::path& base_dir = {}) {
    PrematchJob job;
    try {
        for (const auto& [speaker, files] : manifest.at("speakers").items()) {
            auto& list = job.speakers[speaker];
            for (const auto& f : files) {
                std::filesystem::path p = f.get<std::string>();
                list.push_back(p.is_relative() ? base_dir / p : p);
            }
        }
        if (manifest.contains("output_dir")) {
            std::filesystem::path out = manifest.at("output_dir").get<std::string>();
            job.output_dir = out.is_relative() ? base_dir / out : out;
        }
        job.config.k = manifest.value("k", kDefaultK);
        job.min_utterances_per_speaker = manifest.value("min_utterances_per_speaker", std::size_t{2});
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::kValidation, std::string("bad prematch manifest: ") + e.what());
    }
    return job;
}

/// Builds a manifest from a speaker/chapter/utterance directory tree: every
/// feature file below <root>/<speaker>/ belongs to that speaker.
inline std::map<std::string, std::vector<std::filesystem::path>>
speakers_from_directory(const std::filesystem::path& root, const std::string& extension = ".kvcf") {
    std::map<std::string, std::vector<std::filesystem::path>> speakers;
    for (const auto& speaker_dir : std::filesystem::directory_iterator(root)) {
        if (!speaker_dir.is_directory()) {
            continue;
        }
        auto& files = speakers[speaker_dir.path().filename().string()];
        for (const auto& entry : std::filesystem::recursive_directory_iterator(speaker_dir.path())) {
            if (entry.is_regular_file() && entry.path().extension() == extension) {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
    }
    return speakers;
}

/// Writes <output_dir>/<speaker>/<input file name> for every utterance of
/// every speaker with enough readable utterances. Unreadable files are
/// recorded and excluded; the job fails only if no speaker is processable.
inline JobReport
run_prematch_job(const PrematchJob& job) {
    job.config.validate();
    JobReport report;
    std::size_t processable = 0;

    for (const auto& [speaker, paths] : job.speakers) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<FeatureSequence> utterances;
        std::vector<std::filesystem::path> sources;
        for (const auto& p : paths) {
            try {
                auto seq = load_features(p);
                auto meta = parse_metadata(seq.metadata());
                if (!meta.contains("utterance_id")) {
                    meta["utterance_id"] = p.stem().string();
                    seq.set_metadata(meta.dump());
                }
                utterances.push_back(std::move(seq));
                sources.push_back(p);
            } catch (const Error& e) {
                report.failures.push_back({speaker, p, e.what()});
                ++report.failed;
            }
        }
        if (utterances.size() < job.min_utterances_per_speaker || utterances.size() < 2) {
            report.skipped_speakers.push_back(
                {speaker, utterances.size(),
                 "fewer than " + std::to_string(std::max<std::size_t>(2, job.min_utterances_per_speaker)) +
                     " readable utterances"});
            report.skipped += utterances.size();
            continue;
        }
        std::set<std::string> names;
        std::string clash;
        for (const auto& s : sources) {
            if (!names.insert(s.filename().string()).second) {
                clash = s.filename().string();
            }
        }
        if (!clash.empty()) {
            report.skipped_speakers.push_back({speaker, utterances.size(), "two input files named " + clash});
            report.skipped += utterances.size();
            continue;
        }
        ++processable;

        const auto speaker_dir = job.output_dir / speaker;
        std::filesystem::create_directories(speaker_dir);

        std::vector<std::string> errors(utterances.size());
        std::vector<bool> clamped(utterances.size(), false);
        // Each item builds its own set; parallelism is across utterances.
        KnnConfig inner = job.config;
        inner.workers = 1;
        parallel_for(utterances.size(), job.config.workers ? job.config.workers : worker_count(), [&](std::size_t i) {
            try {
                std::vector<FeatureSequence> others;
                others.reserve(utterances.size() - 1);
                std::size_t other_frames = 0;
                for (std::size_t j = 0; j < utterances.size(); ++j) {
                    if (j != i) {
                        others.push_back(utterances[j]);
                        other_frames += utterances[j].n_frames();
                    }
                }
                clamped[i] = other_frames < inner.k;
                auto out = prematch_utterance(utterances[i], others, inner);
                auto meta = parse_metadata(out.metadata());
                meta["source_file"] = sources[i].filename().string();
                out.set_metadata(meta.dump());
                save_features(out, speaker_dir / sources[i].filename());
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        });

        std::size_t done = 0;
        for (std::size_t i = 0; i < utterances.size(); ++i) {
            if (errors[i].empty()) {
                ++done;
                report.outputs.push_back(speaker_dir / sources[i].filename());
                report.clamped += clamped[i] ? 1 : 0;
            } else {
                report.failures.push_back({speaker, sources[i], errors[i]});
                ++report.failed;
            }
        }
        report.processed += done;
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        report.timings.push_back({speaker, done, seconds});
    }

    if (processable == 0) {
        throw PrematchJobError(std::move(report));
    }
    return report;
}

}  // namespace knnvc
