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

// knnvc command-line tool: conversion, prematching, evaluation, ablation
// sweeps and feature-file inspection.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knnvc/knnvc.hpp"

namespace fs = std::filesystem;
using knnvc::Error;
using knnvc::ErrorKind;
using knnvc::Json;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUnexpected = 1,
    kUsage = 2,
    kIoFailure = 3,
    kInvalidInput = 4,
    kInsufficientData = 5,
    kConfigFailure = 6,
    kPartialFailure = 7,
};

int
exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::kIo:
            return kIoFailure;
        case ErrorKind::kFormat:
        case ErrorKind::kTruncation:
        case ErrorKind::kValidation:
        case ErrorKind::kDegenerateFrame:
            return kInvalidInput;
        case ErrorKind::kEmptySet:
        case ErrorKind::kInsufficientData:
            return kInsufficientData;
        case ErrorKind::kConfig:
            return kConfigFailure;
    }
    return kUnexpected;
}

double
seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string
format_number(double v) {
    std::ostringstream out;
    out << std::setprecision(10) << v;
    return out.str();
}

void
write_text(const fs::path& path, const std::string& text) {
    knnvc::atomic_write(path, [&](std::ostream& out) { out << text; });
}

void
write_run_manifest(const fs::path& out, Json manifest) {
    manifest["tool_version"] = knnvc::kVersion;
    manifest["workers"] = knnvc::worker_count();
    auto path = out;
    path += ".run.json";
    write_text(path, manifest.dump(2) + "\n");
}

Json
read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::kIo, "cannot open " + path.string());
    }
    auto j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw Error(ErrorKind::kFormat, path.string() + " is not valid JSON");
    }
    return j;
}

fs::path
resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_relative() ? base / path : path;
}

knnvc::KOverflow
parse_overflow(const std::string& s) {
    if (s == "clamp") {
        return knnvc::KOverflow::kClamp;
    }
    if (s == "error") {
        return knnvc::KOverflow::kError;
    }
    throw Error(ErrorKind::kConfig, "--k-overflow must be clamp or error");
}

void
warn_if_clamped(const knnvc::KnnConfig& config, std::size_t n) {
    if (config.k > n && config.k_overflow == knnvc::KOverflow::kClamp) {
        std::cerr << "warning: k=" << config.k << " exceeds matching set size " << n << "; using k=" << n << "\n";
    }
}

// ---------------------------------------------------------------- info

int
cmd_info(const fs::path& path) {
    auto seq = knnvc::load_features(path);
    const auto& h = seq.header();
    std::cout << "path=" << path.string() << "\n"
              << "dim=" << h.dim << "\n"
              << "n_frames=" << h.n_frames << "\n"
              << "hop_ms=" << h.hop_ms << "\n"
              << "sample_rate_hz=" << h.sample_rate_hz << "\n"
              << "duration_s=" << format_number(h.duration_s()) << "\n"
              << "metadata=" << h.metadata << "\n";
    return kOk;
}

// ---------------------------------------------------------------- convert

struct ConvertOptions {
    std::string source;
    std::vector<std::string> references;
    std::string out;
    std::size_t k = knnvc::kDefaultK;
    std::string k_overflow = "clamp";
};

int
cmd_convert(const ConvertOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    knnvc::KnnConfig config;
    config.k = opt.k;
    config.k_overflow = parse_overflow(opt.k_overflow);
    config.validate();

    auto source = knnvc::load_features(opt.source);
    std::vector<knnvc::FeatureSequence> refs;
    for (const auto& r : opt.references) {
        refs.push_back(knnvc::load_features(r));
    }
    const double load_s = seconds_since(start);

    const auto build_start = std::chrono::steady_clock::now();
    auto set = knnvc::build_matching_set(refs);
    const double build_s = seconds_since(build_start);
    warn_if_clamped(config, set.size());

    const auto convert_start = std::chrono::steady_clock::now();
    auto converted = knnvc::convert_sequence(source, set, config);
    const double convert_s = seconds_since(convert_start);
    knnvc::save_features(converted, opt.out);

    const double fps = convert_s > 0 ? static_cast<double>(source.n_frames()) / convert_s : 0.0;
    std::cout << "matching_set_vectors=" << set.size() << "\n"
              << "matching_set_duration_s=" << format_number(set.total_duration_s()) << "\n"
              << "source_frames=" << source.n_frames() << "\n"
              << "convert_seconds=" << format_number(convert_s) << "\n"
              << "throughput_frames_per_s=" << format_number(fps) << "\n"
              << "wrote " << opt.out << "\n";

    write_run_manifest(opt.out,
                       Json{{"command", "convert"},
                            {"parameters",
                             {{"source", opt.source},
                              {"references", opt.references},
                              {"out", opt.out},
                              {"k", config.k},
                              {"k_overflow", knnvc::to_string(config.k_overflow)},
                              {"metric", knnvc::to_string(config.metric)}}},
                            {"counts",
                             {{"matching_set_vectors", set.size()},
                              {"reference_utterances", refs.size()},
                              {"source_frames", source.n_frames()}}},
                            {"timings_s", {{"load", load_s}, {"build", build_s}, {"convert", convert_s}}}});
    return kOk;
}

// ---------------------------------------------------------------- prematch

int
cmd_prematch(const std::string& manifest_path, const std::string& out_dir, std::size_t k, bool k_set) {
    const fs::path manifest_file(manifest_path);
    auto job = knnvc::parse_prematch_manifest(read_json_file(manifest_file), manifest_file.parent_path());
    if (!out_dir.empty()) {
        job.output_dir = out_dir;
    }
    if (k_set) {
        job.config.k = k;
    }
    if (job.output_dir.empty()) {
        throw Error(ErrorKind::kConfig, "no output directory (set output_dir in the manifest or pass --out)");
    }
    fs::create_directories(job.output_dir);

    knnvc::JobReport report;
    int code = kOk;
    try {
        report = knnvc::run_prematch_job(job);
    } catch (const knnvc::PrematchJobError& e) {
        report = e.report();
        std::cerr << "error: " << e.what() << "\n";
        code = kInsufficientData;
    }
    if (code == kOk && report.failed > 0) {
        code = kPartialFailure;
    }
    if (report.clamped > 0) {
        std::cerr << "warning: " << report.clamped << " utterances had fewer than k=" << job.config.k
                  << " matching vectors; k was clamped\n";
    }
    for (const auto& s : report.skipped_speakers) {
        std::cerr << "skipped speaker " << s.speaker << ": " << s.reason << "\n";
    }
    for (const auto& f : report.failures) {
        std::cerr << "failed " << f.path.string() << ": " << f.error << "\n";
    }
    write_text(job.output_dir / "prematch_report.json", report.to_json(false).dump(2) + "\n");
    std::cout << "processed=" << report.processed << "\n"
              << "skipped=" << report.skipped << "\n"
              << "failed=" << report.failed << "\n";

    Json timings = Json::array();
    for (const auto& t : report.timings) {
        timings.push_back({{"speaker", t.speaker}, {"utterances", t.utterances}, {"seconds", t.seconds}});
    }
    write_run_manifest(job.output_dir / "prematch",
                       Json{{"command", "prematch"},
                            {"parameters",
                             {{"manifest", manifest_path},
                              {"output_dir", job.output_dir.string()},
                              {"k", job.config.k},
                              {"min_utterances_per_speaker", job.min_utterances_per_speaker}}},
                            {"counts",
                             {{"processed", report.processed},
                              {"skipped", report.skipped},
                              {"failed", report.failed}}},
                            {"timings_s", timings}});
    return code;
}

// ---------------------------------------------------------------- eval

int
cmd_eval_eer(const std::string& trials_path, const std::string& out) {
    std::ifstream in(trials_path);
    if (!in) {
        throw Error(ErrorKind::kIo, "cannot open " + trials_path);
    }
    auto trials = knnvc::read_trials_csv(in);
    auto result = knnvc::compute_eer(trials);
    auto j = result.to_json();
    j["n_trials"] = trials.trials.size();
    std::cout << "eer=" << format_number(result.eer) << "\n"
              << "threshold=" << format_number(result.threshold) << "\n"
              << "far=" << format_number(result.far_at_threshold) << "\n"
              << "frr=" << format_number(result.frr_at_threshold) << "\n";
    if (!out.empty()) {
        write_text(out, j.dump(2) + "\n");
    }
    return kOk;
}

int
cmd_eval_wer(const std::string& transcripts_path, const std::string& out) {
    std::ifstream in(transcripts_path);
    if (!in) {
        throw Error(ErrorKind::kIo, "cannot open " + transcripts_path);
    }
    auto scored = knnvc::score_transcripts(knnvc::read_transcripts_tsv(in));
    std::cout << "wer=" << format_number(scored["corpus"]["wer"].get<double>()) << "\n"
              << "cer=" << format_number(scored["corpus"]["cer"].get<double>()) << "\n"
              << "pairs=" << scored["pairs"].size() << "\n";
    if (!out.empty()) {
        write_text(out, scored.dump(2) + "\n");
    }
    return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateOptions {
    std::string manifest;
    std::vector<double> durations = {5, 10, 30, 60, 300, 480};
    std::vector<std::size_t> ks = {knnvc::kDefaultK};
    std::vector<std::uint64_t> seeds = {0};
    std::string out;
};

std::string
cell_name(double duration, std::size_t k, std::uint64_t seed) {
    return "d" + format_number(duration) + "_k" + std::to_string(k) + "_s" + std::to_string(seed);
}

int
ablate_synthetic(const AblateOptions& opt, const Json& manifest, Json& run) {
    auto config = knnvc::synth::SynthConfig::from_json(manifest.at("synthetic"));
    knnvc::synth::SweepPlan plan;
    plan.durations_s = opt.durations;
    plan.ks = opt.ks;
    plan.seeds = opt.seeds;
    plan.queries_per_speaker = manifest.value("queries_per_speaker", plan.queries_per_speaker);

    auto corpus = knnvc::synth::generate_corpus(config);
    auto rows = knnvc::synth::run_preservation_sweep(corpus, plan);

    std::ostringstream csv;
    csv << "duration_s,preservation,k,seed\n";
    for (const auto& r : rows) {
        csv << format_number(r.duration_s) << "," << format_number(r.preservation) << "," << r.k << "," << r.seed
            << "\n";
    }
    write_text(opt.out, csv.str());
    run["parameters"]["synthetic"] = config.to_json();
    run["parameters"]["queries_per_speaker"] = plan.queries_per_speaker;
    run["counts"] = {{"rows", rows.size()}, {"speakers", corpus.size()}};
    std::cout << "rows=" << rows.size() << "\n";
    return kOk;
}

std::string
optional_metric(const fs::path& dir, const std::string& cell, const char* kind) {
    if (dir.empty()) {
        return "";
    }
    if (std::string(kind) == "eer") {
        auto path = dir / (cell + ".csv");
        if (!fs::exists(path)) {
            return "";
        }
        std::ifstream in(path);
        return format_number(knnvc::compute_eer(knnvc::read_trials_csv(in)).eer);
    }
    auto path = dir / (cell + ".tsv");
    if (!fs::exists(path)) {
        return "";
    }
    std::ifstream in(path);
    auto scored = knnvc::score_transcripts(knnvc::read_transcripts_tsv(in));
    return format_number(scored["corpus"][kind].get<double>());
}

int
ablate_files(const AblateOptions& opt, const Json& manifest, const fs::path& base, Json& run) {
    std::vector<knnvc::FeatureSequence> targets;
    std::vector<knnvc::FeatureSequence> sources;
    std::vector<fs::path> source_paths;
    for (const auto& p : manifest.at("target")) {
        targets.push_back(knnvc::load_features(resolve(base, p.get<std::string>())));
    }
    for (const auto& p : manifest.at("source")) {
        source_paths.push_back(resolve(base, p.get<std::string>()));
        sources.push_back(knnvc::load_features(source_paths.back()));
    }
    const fs::path output_dir =
        manifest.contains("output_dir") ? resolve(base, manifest["output_dir"].get<std::string>()) : fs::path{};
    const fs::path trials_dir =
        manifest.contains("trials_dir") ? resolve(base, manifest["trials_dir"].get<std::string>()) : fs::path{};
    const fs::path transcripts_dir = manifest.contains("transcripts_dir")
                                         ? resolve(base, manifest["transcripts_dir"].get<std::string>())
                                         : fs::path{};
    auto full = knnvc::build_matching_set(targets);

    std::vector<double> durations = opt.durations;
    std::vector<std::size_t> ks = opt.ks;
    std::vector<std::uint64_t> seeds = opt.seeds;
    std::sort(durations.begin(), durations.end());
    std::sort(ks.begin(), ks.end());
    std::sort(seeds.begin(), seeds.end());

    std::ostringstream csv;
    csv << "duration_s,k,seed,n_vectors,set_duration_s,frames_converted,eer,wer,cer,error\n";
    std::size_t failed = 0;
    for (auto duration : durations) {
        for (auto k : ks) {
            for (auto seed : seeds) {
                const auto cell = cell_name(duration, k, seed);
                std::size_t n_vectors = 0;
                double set_duration = 0.0;
                std::size_t frames = 0;
                std::string eer, wer, cer, error;
                try {
                    auto subset = knnvc::subsample_matching_set(full, duration, seed);
                    n_vectors = subset.size();
                    set_duration = subset.total_duration_s();
                    knnvc::KnnConfig config;
                    config.k = k;
                    warn_if_clamped(config, subset.size());
                    if (!output_dir.empty()) {
                        fs::create_directories(output_dir / cell);
                    }
                    for (std::size_t i = 0; i < sources.size(); ++i) {
                        auto converted = knnvc::convert_sequence(sources[i], subset, config);
                        frames += converted.n_frames();
                        if (!output_dir.empty()) {
                            knnvc::save_features(converted, output_dir / cell / source_paths[i].filename());
                        }
                    }
                    eer = optional_metric(trials_dir, cell, "eer");
                    wer = optional_metric(transcripts_dir, cell, "wer");
                    cer = optional_metric(transcripts_dir, cell, "cer");
                } catch (const std::exception& e) {
                    ++failed;
                    error = e.what();
                    for (auto& c : error) {
                        if (c == ',' || c == '\n') {
                            c = ';';
                        }
                    }
                    std::cerr << "cell " << cell << " failed: " << e.what() << "\n";
                }
                csv << format_number(duration) << "," << k << "," << seed << "," << n_vectors << ","
                    << format_number(set_duration) << "," << frames << "," << eer << "," << wer << "," << cer << ","
                    << error << "\n";
            }
        }
    }
    write_text(opt.out, csv.str());
    run["counts"] = {{"cells", durations.size() * ks.size() * seeds.size()},
                     {"failed_cells", failed},
                     {"target_vectors", full.size()},
                     {"source_utterances", sources.size()}};
    std::cout << "cells=" << durations.size() * ks.size() * seeds.size() << "\n"
              << "failed=" << failed << "\n";
    return failed == 0 ? kOk : kPartialFailure;
}

int
cmd_ablate(const AblateOptions& opt) {
    const auto start = std::chrono::steady_clock::now();
    for (auto d : opt.durations) {
        if (!(d > 0)) {
            throw Error(ErrorKind::kConfig, "durations must be > 0");
        }
    }
    for (auto k : opt.ks) {
        if (k < 1) {
            throw Error(ErrorKind::kConfig, "k must be >= 1");
        }
    }
    const fs::path manifest_path(opt.manifest);
    auto manifest = read_json_file(manifest_path);
    Json run{{"command", "ablate"},
             {"parameters",
              {{"manifest", opt.manifest},
               {"durations_s", opt.durations},
               {"k", opt.ks},
               {"seeds", opt.seeds},
               {"out", opt.out}}}};
    int code = kOk;
    try {
        if (manifest.contains("synthetic")) {
            code = ablate_synthetic(opt, manifest, run);
        } else {
            code = ablate_files(opt, manifest, manifest_path.parent_path(), run);
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::kValidation, std::string("bad ablation manifest: ") + e.what());
    }
    run["timings_s"] = {{"total", seconds_since(start)}};
    write_run_manifest(opt.out, run);
    return code;
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
    std::string out;
    knnvc::synth::SynthConfig config;
};

int
cmd_synth(const SynthOptions& opt) {
    auto corpus = knnvc::synth::generate_corpus(opt.config);
    const fs::path root(opt.out);
    Json speakers = Json::object();
    for (std::size_t s = 0; s < corpus.size(); ++s) {
        const auto name = knnvc::synth::speaker_name(s);
        fs::create_directories(root / name);
        auto& list = speakers[name] = Json::array();
        for (const auto& utt : corpus[s]) {
            const auto id = knnvc::metadata_string(utt.sequence.metadata(), "utterance_id").value();
            const fs::path rel = fs::path(name) / (id + ".kvcf");
            knnvc::save_features(utt.sequence, root / rel);
            list.push_back(rel.string());
        }
    }
    write_text(root / "corpus.json",
               Json{{"speakers", speakers}, {"synthetic", opt.config.to_json()}}.dump(2) + "\n");
    std::cout << "speakers=" << corpus.size() << "\n"
              << "utterances=" << corpus.size() * opt.config.utterances_per_speaker << "\n"
              << "wrote " << (root / "corpus.json").string() << "\n";
    return kOk;
}

}  // namespace

int
main(int argc, char** argv) {
    CLI::App app{"knnvc: k-nearest-neighbors voice conversion over speech feature files"};
    app.require_subcommand(1);
    app.set_version_flag("--version", knnvc::kVersion);

    std::string info_path;
    auto* info = app.add_subcommand("info", "Print a feature file's header and metadata");
    info->add_option("path", info_path, "Feature file")->required();

    ConvertOptions conv;
    auto* convert = app.add_subcommand("convert", "Convert a source utterance toward the reference speaker");
    convert->add_option("--source", conv.source, "Source feature file")->required();
    convert->add_option("--reference", conv.references, "Reference feature files (matching set)")->required();
    convert->add_option("--out", conv.out, "Output feature file")->required();
    convert->add_option("--k", conv.k, "Number of neighbors")->capture_default_str();
    convert->add_option("--k-overflow", conv.k_overflow, "clamp or error when k exceeds the set size")
        ->capture_default_str();

    std::string prematch_manifest;
    std::string prematch_out;
    std::size_t prematch_k = knnvc::kDefaultK;
    auto* prematch = app.add_subcommand("prematch", "Build prematched vocoder training features");
    prematch->add_option("--manifest", prematch_manifest, "Job manifest JSON")->required();
    prematch->add_option("--out", prematch_out, "Output directory (overrides the manifest)");
    auto* prematch_k_opt = prematch->add_option("--k", prematch_k, "Number of neighbors (overrides the manifest)");

    std::string trials_path;
    std::string eer_out;
    auto* eval_eer = app.add_subcommand("eval-eer", "Equal error rate from a score,label CSV");
    eval_eer->add_option("trials", trials_path, "Trial CSV")->required();
    eval_eer->add_option("--out", eer_out, "Write the result as JSON");

    std::string transcripts_path;
    std::string wer_out;
    auto* eval_wer = app.add_subcommand("eval-wer", "Word/character error rates from a transcript TSV");
    eval_wer->add_option("transcripts", transcripts_path, "Transcript TSV")->required();
    eval_wer->add_option("--out", wer_out, "Write per-pair and corpus results as JSON");

    AblateOptions abl;
    auto* ablate = app.add_subcommand("ablate", "Sweep matching-set duration, k and seed");
    ablate->add_option("--manifest", abl.manifest, "Corpus manifest JSON")->required();
    ablate->add_option("--durations", abl.durations, "Matching-set durations in seconds")
        ->delimiter(',')
        ->capture_default_str();
    ablate->add_option("--k", abl.ks, "Neighbor counts")->delimiter(',')->capture_default_str();
    ablate->add_option("--seed", abl.seeds, "Subsampling seeds")->delimiter(',')->capture_default_str();
    ablate->add_option("--out", abl.out, "Output CSV")->required();

    SynthOptions syn;
    auto* synth = app.add_subcommand("synth", "Write a synthetic labeled corpus and its manifest");
    synth->add_option("--out", syn.out, "Output directory")->required();
    synth->add_option("--seed", syn.config.seed)->capture_default_str();
    synth->add_option("--speakers", syn.config.n_speakers)->capture_default_str();
    synth->add_option("--utterances", syn.config.utterances_per_speaker)->capture_default_str();
    synth->add_option("--frames", syn.config.frames_per_utterance)->capture_default_str();
    synth->add_option("--dim", syn.config.dim)->capture_default_str();
    synth->add_option("--phones", syn.config.n_phones)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*info) {
            return cmd_info(info_path);
        }
        if (*convert) {
            return cmd_convert(conv);
        }
        if (*prematch) {
            return cmd_prematch(prematch_manifest, prematch_out, prematch_k, prematch_k_opt->count() > 0);
        }
        if (*eval_eer) {
            return cmd_eval_eer(trials_path, eer_out);
        }
        if (*eval_wer) {
            return cmd_eval_wer(transcripts_path, wer_out);
        }
        if (*ablate) {
            return cmd_ablate(abl);
        }
        if (*synth) {
            return cmd_synth(syn);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIoFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kUsage;
}
