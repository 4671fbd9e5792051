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

// On-disk feature container shared with the model bridge.
//
// Layout, little-endian throughout:
//   [0, 8)    magic "KVCFEAT1"
//   [8, 12)   u32 dim
//   [12, 20)  u64 n_frames
//   [20, 24)  u32 hop_ms
//   [24, 28)  u32 sample_rate_hz
//   [28, 32)  u32 metadata_len
//   then metadata_len bytes of UTF-8 JSON, then n_frames * dim binary32
//   values in frame-major order.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knnvc/error.hpp"

namespace knnvc {

inline constexpr std::array<char, 8> kFeatureMagic = {'K', 'V', 'C', 'F', 'E', 'A', 'T', '1'};
inline constexpr std::size_t kFixedHeaderBytes = 32;

inline constexpr std::uint32_t kDefaultDim = 1024;
inline constexpr std::uint32_t kDefaultHopMs = 20;
inline constexpr std::uint32_t kDefaultSampleRateHz = 16000;

struct FeatureFileHeader {
    std::uint32_t dim = kDefaultDim;
    std::uint64_t n_frames = 0;
    std::uint32_t hop_ms = kDefaultHopMs;
    std::uint32_t sample_rate_hz = kDefaultSampleRateHz;
    std::string metadata = "{}";

    std::uint64_t
    payload_bytes() const {
        return n_frames * static_cast<std::uint64_t>(dim) * sizeof(float);
    }

    double
    duration_s() const {
        return static_cast<double>(n_frames) * hop_ms / 1000.0;
    }

    bool
    operator==(const FeatureFileHeader&) const = default;
};

inline void
validate_header(const FeatureFileHeader& header) {
    if (header.dim < 1) {
        throw Error(ErrorKind::kValidation, "dim must be >= 1");
    }
    if (header.hop_ms < 1) {
        throw Error(ErrorKind::kValidation, "hop_ms must be >= 1");
    }
    if (header.sample_rate_hz < 1) {
        throw Error(ErrorKind::kValidation, "sample_rate_hz must be >= 1");
    }
    if (header.metadata.size() > UINT32_MAX) {
        throw Error(ErrorKind::kValidation, "metadata exceeds 4 GiB");
    }
}

/// A time-ordered sequence of feature frames for one utterance. Frames are
/// stored row-major; `frame(t)` is a view of row t.
class FeatureSequence {
public:
    FeatureSequence() = default;

    FeatureSequence(FeatureFileHeader header, std::vector<float> data)
        : header_(std::move(header)), data_(std::move(data)) {
        validate_header(header_);
        if (data_.size() != header_.n_frames * header_.dim) {
            throw Error(ErrorKind::kValidation,
                        "frame data holds " + std::to_string(data_.size()) + " values, header declares " +
                            std::to_string(header_.n_frames * header_.dim));
        }
    }

    static FeatureSequence
    from_frames(std::uint32_t dim,
                std::vector<float> data,
                std::string metadata = "{}",
                std::uint32_t hop_ms = kDefaultHopMs,
                std::uint32_t sample_rate_hz = kDefaultSampleRateHz) {
        if (dim == 0 || data.size() % dim != 0) {
            throw Error(ErrorKind::kValidation, "frame data is not a whole number of dim-" + std::to_string(dim) + " rows");
        }
        FeatureFileHeader header{dim, data.size() / dim, hop_ms, sample_rate_hz, std::move(metadata)};
        return FeatureSequence(std::move(header), std::move(data));
    }

    const FeatureFileHeader&
    header() const {
        return header_;
    }

    std::uint32_t
    dim() const {
        return header_.dim;
    }

    std::size_t
    n_frames() const {
        return static_cast<std::size_t>(header_.n_frames);
    }

    std::span<const float>
    frame(std::size_t t) const {
        return {data_.data() + t * header_.dim, header_.dim};
    }

    std::span<const float>
    data() const {
        return data_;
    }

    const std::string&
    metadata() const {
        return header_.metadata;
    }

    void
    set_metadata(std::string metadata) {
        header_.metadata = std::move(metadata);
    }

    /// Throws a validation error if any value is NaN or infinite.
    void
    validate_finite() const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i])) {
                throw Error(ErrorKind::kValidation,
                            "non-finite value at frame " + std::to_string(i / header_.dim) + ", component " +
                                std::to_string(i % header_.dim));
            }
        }
    }

    bool
    operator==(const FeatureSequence&) const = default;

private:
    FeatureFileHeader header_{kDefaultDim, 0, kDefaultHopMs, kDefaultSampleRateHz, "{}"};
    std::vector<float> data_;
};

namespace detail {

template <typename UInt>
void
put_le(std::string& out, UInt value) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

template <typename UInt>
UInt
get_le(const unsigned char* bytes) {
    UInt value = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        value |= static_cast<UInt>(bytes[i]) << (8 * i);
    }
    return value;
}

inline void
write_payload(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size_bytes()));
    } else {
        std::string buf;
        buf.reserve(values.size_bytes());
        for (float v : values) {
            put_le(buf, std::bit_cast<std::uint32_t>(v));
        }
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    }
}

inline void
read_payload(std::istream& in, std::span<float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
        std::vector<unsigned char> buf(values.size_bytes());
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        for (std::size_t i = 0; i < values.size(); ++i) {
            values[i] = std::bit_cast<float>(get_le<std::uint32_t>(buf.data() + 4 * i));
        }
    }
}

}  // namespace detail

/// Serializes `seq` to `out`. Returns the number of bytes written.
inline std::uint64_t
write_features(const FeatureSequence& seq, std::ostream& out) {
    const auto& header = seq.header();
    validate_header(header);
    seq.validate_finite();

    std::string fixed(kFeatureMagic.begin(), kFeatureMagic.end());
    detail::put_le<std::uint32_t>(fixed, header.dim);
    detail::put_le<std::uint64_t>(fixed, header.n_frames);
    detail::put_le<std::uint32_t>(fixed, header.hop_ms);
    detail::put_le<std::uint32_t>(fixed, header.sample_rate_hz);
    detail::put_le<std::uint32_t>(fixed, static_cast<std::uint32_t>(header.metadata.size()));
    out.write(fixed.data(), static_cast<std::streamsize>(fixed.size()));
    out.write(header.metadata.data(), static_cast<std::streamsize>(header.metadata.size()));
    detail::write_payload(out, seq.data());
    if (!out) {
        throw Error(ErrorKind::kIo, "failed writing feature stream");
    }
    return kFixedHeaderBytes + header.metadata.size() + header.payload_bytes();
}

/// Parses a feature stream. The payload must end exactly where the header
/// says; trailing bytes and short payloads are both truncation errors.
inline FeatureSequence
read_features(std::istream& in) {
    std::array<unsigned char, kFixedHeaderBytes> fixed{};
    in.read(reinterpret_cast<char*>(fixed.data()), fixed.size());
    if (in.gcount() < static_cast<std::streamsize>(kFeatureMagic.size()) ||
        std::memcmp(fixed.data(), kFeatureMagic.data(), kFeatureMagic.size()) != 0) {
        throw Error(ErrorKind::kFormat, "missing KVCFEAT1 magic");
    }
    if (in.gcount() != static_cast<std::streamsize>(fixed.size())) {
        throw Error(ErrorKind::kTruncation, "stream ends inside the fixed header");
    }

    FeatureFileHeader header;
    header.dim = detail::get_le<std::uint32_t>(fixed.data() + 8);
    header.n_frames = detail::get_le<std::uint64_t>(fixed.data() + 12);
    header.hop_ms = detail::get_le<std::uint32_t>(fixed.data() + 20);
    header.sample_rate_hz = detail::get_le<std::uint32_t>(fixed.data() + 24);
    const auto metadata_len = detail::get_le<std::uint32_t>(fixed.data() + 28);
    header.metadata.assign(metadata_len, '\0');
    validate_header(header);

    in.read(header.metadata.data(), metadata_len);
    if (in.gcount() != static_cast<std::streamsize>(metadata_len)) {
        throw Error(ErrorKind::kTruncation, "stream ends inside the metadata block");
    }

    // Guard the allocation against corrupt headers before trusting n_frames.
    if (header.n_frames > (UINT64_MAX / sizeof(float)) / header.dim) {
        throw Error(ErrorKind::kFormat, "declared payload size overflows");
    }
    const std::uint64_t n_values = header.n_frames * header.dim;
    const auto here = in.tellg();
    if (here != std::streampos(-1)) {
        in.seekg(0, std::ios::end);
        const auto end = in.tellg();
        in.seekg(here);
        const auto available = static_cast<std::uint64_t>(end - here);
        if (available != n_values * sizeof(float)) {
            throw Error(ErrorKind::kTruncation,
                        "payload holds " + std::to_string(available) + " bytes, header declares " +
                            std::to_string(n_values * sizeof(float)));
        }
    }

    std::vector<float> data(static_cast<std::size_t>(n_values));
    detail::read_payload(in, data);
    if (static_cast<std::uint64_t>(in.gcount()) != n_values * sizeof(float) && n_values != 0) {
        throw Error(ErrorKind::kTruncation, "stream ends inside the payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorKind::kTruncation, "trailing bytes after the declared payload");
    }

    FeatureSequence seq(std::move(header), std::move(data));
    seq.validate_finite();
    return seq;
}

inline FeatureSequence
load_features(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::kIo, "cannot open " + path.string());
    }
    try {
        return read_features(in);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + std::string(e.what()));
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// failed write never leaves a partial file at `path`.
template <typename Writer>
void
atomic_write(const std::filesystem::path& path, Writer&& writer) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
        }
        try {
            writer(out);
            out.flush();
            if (!out) {
                throw Error(ErrorKind::kIo, "failed writing " + tmp.string());
            }
        } catch (...) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw;
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error(ErrorKind::kIo, "cannot rename into " + path.string());
    }
}

inline std::uint64_t
save_features(const FeatureSequence& seq, const std::filesystem::path& path) {
    std::uint64_t written = 0;
    atomic_write(path, [&](std::ostream& out) { written = write_features(seq, out); });
    return written;
}

}  // namespace knnvc
