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

// Dense float kernels for the similarity scan.
//
// Every dot product in the library has the same arithmetic shape: sixteen
// independent lane accumulators (lane j sums a[i]*b[i] for i = j mod 16,
// multiply then add, never fused) reduced in a fixed tree. The SIMD paths
// and the scalar path implement exactly that shape, and the tiled kernel
// runs it per (query, row) pair, so a score from the tiled scan is bitwise
// equal to the single-pair dot(). Builds must not enable floating-point
// contraction (-ffp-contract=off) for the scalar path to keep that shape.

#include <cmath>
#include <cstddef>
#include <span>

#if defined(__AVX512F__) || defined(__AVX__)
#include <immintrin.h>
#endif

namespace knnvc::kernels {

inline constexpr std::size_t kLanes = 16;

namespace detail {

#if defined(__AVX512F__)

struct Lanes {
    __m512 v;

    static Lanes
    zero() {
        return {_mm512_setzero_ps()};
    }
    static Lanes
    load(const float* p) {
        return {_mm512_loadu_ps(p)};
    }
    void
    mul_add(const Lanes& a, const Lanes& b) {
        v = _mm512_add_ps(v, _mm512_mul_ps(a.v, b.v));
    }
    void
    store(float* out) const {
        _mm512_storeu_ps(out, v);
    }
};

#elif defined(__AVX__)

struct Lanes {
    __m256 lo;
    __m256 hi;

    static Lanes
    zero() {
        return {_mm256_setzero_ps(), _mm256_setzero_ps()};
    }
    static Lanes
    load(const float* p) {
        return {_mm256_loadu_ps(p), _mm256_loadu_ps(p + 8)};
    }
    void
    mul_add(const Lanes& a, const Lanes& b) {
        lo = _mm256_add_ps(lo, _mm256_mul_ps(a.lo, b.lo));
        hi = _mm256_add_ps(hi, _mm256_mul_ps(a.hi, b.hi));
    }
    void
    store(float* out) const {
        _mm256_storeu_ps(out, lo);
        _mm256_storeu_ps(out + 8, hi);
    }
};

#else

struct Lanes {
    float v[kLanes];

    static Lanes
    zero() {
        return {};
    }
    static Lanes
    load(const float* p) {
        Lanes l;
        for (std::size_t j = 0; j < kLanes; ++j) {
            l.v[j] = p[j];
        }
        return l;
    }
    void
    mul_add(const Lanes& a, const Lanes& b) {
        for (std::size_t j = 0; j < kLanes; ++j) {
            v[j] += a.v[j] * b.v[j];
        }
    }
    void
    store(float* out) const {
        for (std::size_t j = 0; j < kLanes; ++j) {
            out[j] = v[j];
        }
    }
};

#endif

/// Adds the n % 16 trailing products into lanes 0.. and reduces.
inline float
finish(const Lanes& acc, const float* a, const float* b, std::size_t tail) {
    float lanes[kLanes];
    acc.store(lanes);
    for (std::size_t j = 0; j < tail; ++j) {
        lanes[j] += a[j] * b[j];
    }
    float r8[8];
    for (std::size_t j = 0; j < 8; ++j) {
        r8[j] = lanes[j] + lanes[j + 8];
    }
    float r4[4];
    for (std::size_t j = 0; j < 4; ++j) {
        r4[j] = r8[j] + r8[j + 4];
    }
    return (r4[0] + r4[2]) + (r4[1] + r4[3]);
}

}  // namespace detail

inline float
dot(const float* a, const float* b, std::size_t n) {
    auto acc = detail::Lanes::zero();
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        acc.mul_add(detail::Lanes::load(a + i), detail::Lanes::load(b + i));
    }
    return detail::finish(acc, a + i, b + i, n - i);
}

inline float
dot(std::span<const float> a, std::span<const float> b) {
    return dot(a.data(), b.data(), a.size());
}

/// Scores of Q queries against R rows: out[q * R + r] is bitwise equal to
/// dot(queries[q], rows[r], n).
template <std::size_t Q, std::size_t R>
inline void
dot_tile(const float* const* queries, const float* const* rows, std::size_t n, float* out) {
    detail::Lanes acc[Q][R];
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t r = 0; r < R; ++r) {
            acc[q][r] = detail::Lanes::zero();
        }
    }
    std::size_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        detail::Lanes rv[R];
        for (std::size_t r = 0; r < R; ++r) {
            rv[r] = detail::Lanes::load(rows[r] + i);
        }
        for (std::size_t q = 0; q < Q; ++q) {
            const auto qv = detail::Lanes::load(queries[q] + i);
            for (std::size_t r = 0; r < R; ++r) {
                acc[q][r].mul_add(qv, rv[r]);
            }
        }
    }
    for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t r = 0; r < R; ++r) {
            out[q * R + r] = detail::finish(acc[q][r], queries[q] + i, rows[r] + i, n - i);
        }
    }
}

/// Euclidean norm, accumulated in double.
inline double
norm(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) {
        sum += static_cast<double>(x) * x;
    }
    return std::sqrt(sum);
}

}  // namespace knnvc::kernels
