/*
   Copyright 2026 The smeadmm Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Reproducible random streams.
//
// Every Monte Carlo run owns its own stream. The seed of the stream for
// (master_seed, run_index, tag) is
//
//     s0   = mix64(master_seed)
//     s1   = mix64(s0 ^ (run_index + 0x9E3779B97F4A7C15))
//     seed = mix64(s1 ^ (tag       + 0xD1B54A32D192ED03))
//
// where mix64 is the SplitMix64 output function. The seed initializes a
// std::mt19937_64 engine. Streams therefore depend only on the triple, never
// on thread scheduling.

#include <cstdint>
#include <random>

namespace smeadmm {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t run_index,
                                    std::uint64_t tag)
{
    const std::uint64_t s0 = mix64(master_seed);
    const std::uint64_t s1 = mix64(s0 ^ (run_index + 0x9E3779B97F4A7C15ULL));
    return mix64(s1 ^ (tag + 0xD1B54A32D192ED03ULL));
}

/// Stream families. The low 32 bits of a tag carry a sub-index (e.g. the
/// refinement level m), so ADMM and SME runs never share a stream.
enum class StreamKind : std::uint64_t {
    admm = 1,
    sme = 2,
    moments = 3,
    data = 4,
    generic = 5,
};

constexpr std::uint64_t stream_tag(StreamKind kind, std::uint32_t sub = 0)
{
    return (static_cast<std::uint64_t>(kind) << 32) | sub;
}

class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

    RandomStream(std::uint64_t master_seed, std::uint64_t run_index, std::uint64_t tag)
        : engine_(derive_seed(master_seed, run_index, tag))
    {
    }

    /// Uniform on [0, 1) from exactly one engine output (53 random bits).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double gaussian() { return normal_(engine_); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

} // namespace smeadmm
