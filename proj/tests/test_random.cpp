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

#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>

#include <gtest/gtest.h>

#include "smeadmm/parallel.hpp"
#include "smeadmm/random.hpp"

using namespace smeadmm;

TEST(Random, Mix64MatchesSplitMix64)
{
    // First outputs of SplitMix64 seeded with 0 and 1234567 (reference generator).
    EXPECT_EQ(mix64(0), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(mix64(1234567), 0x599ED017FB08FC85ULL);
}

TEST(Random, DeriveSeedSpellsOutTheChain)
{
    const std::uint64_t s0 = mix64(42);
    const std::uint64_t s1 = mix64(s0 ^ (7 + 0x9E3779B97F4A7C15ULL));
    EXPECT_EQ(derive_seed(42, 7, 3), mix64(s1 ^ (3 + 0xD1B54A32D192ED03ULL)));
}

TEST(Random, StreamsAreDistinct)
{
    std::set<std::uint64_t> seen;
    for (std::uint64_t run = 0; run < 1000; ++run) {
        seen.insert(derive_seed(1, run, stream_tag(StreamKind::admm, 7)));
        seen.insert(derive_seed(1, run, stream_tag(StreamKind::sme, 7)));
        seen.insert(derive_seed(2, run, stream_tag(StreamKind::admm, 7)));
    }
    EXPECT_EQ(seen.size(), 3000u);
    EXPECT_EQ(stream_tag(StreamKind::sme, 9), (2ULL << 32) | 9ULL);
}

TEST(Random, Reproducible)
{
    RandomStream a(5, 6, 7), b(5, 6, 7);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.uniform(), b.uniform());
        EXPECT_EQ(a.gaussian(), b.gaussian());
    }
}

TEST(Random, UniformUsesOneEngineOutput)
{
    RandomStream a(99);
    std::mt19937_64 ref(99);
    for (int i = 0; i < 10; ++i) {
        const std::uint64_t raw = ref();
        EXPECT_EQ(a.uniform(), static_cast<double>(raw >> 11) * 0x1.0p-53);
    }
}

TEST(Random, UniformAndGaussianMoments)
{
    RandomStream r(123);
    const int n = 200000;
    double su = 0, su2 = 0, sg = 0, sg2 = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        su2 += u * u;
        const double g = r.gaussian();
        sg += g;
        sg2 += g * g;
    }
    EXPECT_NEAR(su / n, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / n));
    EXPECT_NEAR(su2 / n - 0.25, 1.0 / 12.0, 1e-3);
    EXPECT_NEAR(sg / n, 0.0, 4.0 / std::sqrt(double(n)));
    EXPECT_NEAR(sg2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
}

TEST(Parallel, VisitsEveryTaskOnce)
{
    for (std::size_t threads : {1u, 2u, 4u}) {
        std::vector<std::atomic<int>> hits(1000);
        parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i]++; });
        for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
    }
}

TEST(Parallel, PropagatesExceptions)
{
    EXPECT_THROW(parallel_for(100, 3,
                              [](std::size_t i) {
                                  if (i == 50) throw std::runtime_error("boom");
                              }),
                 std::runtime_error);
}

TEST(Parallel, ResolveThreads)
{
    EXPECT_EQ(resolve_threads(3), 3u);
    EXPECT_GE(resolve_threads(0), 1u);
}
