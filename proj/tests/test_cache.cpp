#include "fourier_kv/cache.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"

using namespace fourier_kv;

namespace {

MatrixF random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    MatrixF m(rows, cols);
    std::normal_distribution<float> nd;
    for (float& v : m.flat()) v = nd(rng);
    return m;
}

DimList first_n(std::size_t n) {
    DimList d(n);
    std::iota(d.begin(), d.end(), std::size_t{0});
    return d;
}

CacheLayout one_head(PartitionConfig p, std::size_t d, DimList kc, DimList vc) {
    CacheLayout lay(p, 1, 1, d);
    lay.set_split(0, 0, {std::move(kc), std::move(vc)});
    return lay;
}

// 32 layers: 4 at (kc, vc) = first, 20 middle, 8 last; counts given directly
CacheLayout preset_layout(std::size_t d, std::size_t heads, std::array<std::size_t, 6> counts) {
    CacheLayout lay(PartitionConfig{}, 32, heads, d);
    for (std::size_t l = 0; l < 32; ++l) {
        const std::size_t band = l < 4 ? 0 : (l < 24 ? 1 : 2);
        for (std::size_t h = 0; h < heads; ++h) lay.set_split(l, h, {first_n(counts[2 * band]), first_n(counts[2 * band + 1])});
    }
    return lay;
}

bool coeffs_equal(const SpectralState& a, const SpectralState& b) { return a.coeffs == b.coeffs; }

}  // namespace

TEST(Layout, ValidatesSplits) {
    CacheLayout lay(PartitionConfig{}, 1, 1, 8);
    EXPECT_THROW(lay.set_split(0, 0, {{1, 1}, {}}), std::invalid_argument);
    EXPECT_THROW(lay.set_split(0, 0, {{8}, {}}), std::invalid_argument);
    lay.set_split(0, 0, {{5, 2}, {7}});
    EXPECT_EQ(lay.split(0, 0).k_compressed, (DimList{2, 5}));
    EXPECT_EQ(complement_dims({2, 5}, 8), (DimList{0, 1, 3, 4, 6, 7}));
    EXPECT_THROW(CacheLayout(PartitionConfig{4, 0, 64, 4}, 1, 1, 8), std::invalid_argument);
}

TEST(Prefill, NoMiddleWhenSequenceFitsExactBlocks) {
    std::mt19937_64 rng(1);
    PartitionConfig p{4, 16, 64, 8};
    FourierBasis basis(8, 64);
    const auto lay = one_head(p, 6, first_n(6), first_n(6));
    const auto K = random_matrix(20, 6, rng), V = random_matrix(20, 6, rng);
    const auto c = prefill(K, V, lay, 0, 0, basis);
    EXPECT_EQ(c.middle_count(), 0u);
    for (double v : c.key_state().coeffs.flat()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(c.local().size(), 16u);
    EXPECT_EQ(c.initial_keys().rows(), 4u);
}

TEST(Prefill, MiddleRangeArithmetic) {
    std::mt19937_64 rng(2);
    PartitionConfig p{4, 16, 64, 8};
    FourierBasis basis(8, 64);
    const auto lay = one_head(p, 4, {0, 2}, {1});
    const auto K = random_matrix(64, 4, rng), V = random_matrix(64, 4, rng);
    const auto c = prefill(K, V, lay, 0, 0, basis);
    // enumerate positions: not initial (< 4), not among the last 16
    std::size_t count = 0;
    Position lo = -1, hi = -1;
    for (Position t = 0; t < 64; ++t)
        if (t >= 4 && t < 64 - 16) {
            if (lo < 0) lo = t;
            hi = t;
            ++count;
        }
    EXPECT_EQ(c.middle_count(), count);
    EXPECT_EQ(count, 44u);
    EXPECT_EQ(c.key_state().first_pos, lo);
    EXPECT_EQ(c.key_state().last_pos(), hi);
    EXPECT_EQ(c.value_state().token_count, c.key_state().token_count);
    EXPECT_EQ(c.local().position(0), 48);
}

TEST(Prefill, CopiesExactBlocksAndKeptDimsVerbatim) {
    std::mt19937_64 rng(3);
    PartitionConfig p{3, 5, 64, 4};
    FourierBasis basis(4, 64);
    const auto lay = one_head(p, 5, {1, 3}, {0, 4});
    const auto K = random_matrix(30, 5, rng), V = random_matrix(30, 5, rng);
    const auto c = prefill(K, V, lay, 0, 0, basis);
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(c.initial_keys()(t, d), K(t, d));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(c.local().value(i)[d], V(25 + i, d));
    const DimList ku{0, 2, 4}, vu{1, 2, 3};
    for (std::size_t i = 0; i < c.middle_count(); ++i) {
        for (std::size_t j = 0; j < ku.size(); ++j) EXPECT_EQ(c.middle_keys_kept()(i, j), K(3 + i, ku[j]));
        for (std::size_t j = 0; j < vu.size(); ++j) EXPECT_EQ(c.middle_values_kept()(i, j), V(3 + i, vu[j]));
    }
    // compressed dims match the direct sum oracle
    std::vector<std::vector<float>> xs;
    for (std::size_t i = 0; i < c.middle_count(); ++i) xs.push_back({K(3 + i, 1), K(3 + i, 3)});
    const auto ref = oracle::direct_fourier_sum(4, 64, xs, 3);
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(c.key_state().coeffs(r, j), ref[r][j], 1e-9);
}

TEST(Prefill, EmptyCompressedSetIsLossless) {
    std::mt19937_64 rng(4);
    PartitionConfig p{2, 4, 64, 4};
    FourierBasis basis(4, 64);
    const auto lay = one_head(p, 3, {}, {});
    const auto K = random_matrix(40, 3, rng), V = random_matrix(40, 3, rng);
    const auto c = prefill(K, V, lay, 0, 0, basis);
    EXPECT_EQ(c.spectral_floats(), 0u);
    for (std::size_t i = 0; i < c.middle_count(); ++i)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(c.middle_keys_kept()(i, d), K(2 + i, d));
    EXPECT_EQ(c.exact_floats(), 2u * 40 * 3);
}

TEST(Prefill, RejectsGeometryMismatch) {
    PartitionConfig p{2, 4, 64, 4};
    const auto lay = one_head(p, 3, {}, {});
    MatrixF K(10, 4), V(10, 4);
    EXPECT_THROW(prefill(K, V, lay, 0, 0, FourierBasis(4, 64)), std::invalid_argument);
    MatrixF K3(10, 3), V3(10, 3);
    EXPECT_THROW(prefill(K3, V3, lay, 0, 0, FourierBasis(5, 64)), std::invalid_argument);
    KVTrace t({2, 1, 3, 10});
    EXPECT_THROW(prefill(t, 10, lay, 0, 0, FourierBasis(4, 64)), std::invalid_argument);
}

TEST(Append, NonFullRingLeavesStatesUnchanged) {
    std::mt19937_64 rng(5);
    FourierBasis basis(4, 64);
    const auto lay = one_head({2, 20, 64, 4}, 4, {0, 1}, {2});
    const auto K = random_matrix(15, 4, rng), V = random_matrix(15, 4, rng);
    auto c = prefill(K, V, lay, 0, 0, basis);  // ring holds 13 of 20
    const auto before = c.key_state();
    append_token(c, basis, K.row(0), V.row(0));
    EXPECT_TRUE(coeffs_equal(before, c.key_state()));
    EXPECT_EQ(c.key_state().token_count, before.token_count);
    EXPECT_EQ(c.length(), 16u);
    EXPECT_EQ(c.local().size(), 14u);
}

TEST(Append, ZeroEvictionOnlyBumpsCount) {
    PartitionConfig p{1, 2, 64, 4};
    FourierBasis basis(4, 64);
    auto lay = one_head(p, 3, {0, 1, 2}, {0, 1, 2});
    HeadCache c(lay, 0, 0);
    const std::vector<float> one{1, 2, 3}, zero{0, 0, 0};
    append_token(c, basis, one, one);    // initial
    append_token(c, basis, one, one);    // ring 1
    append_token(c, basis, zero, zero);  // ring 2
    append_token(c, basis, zero, zero);  // evicts position 1 (one)
    const auto s = c.key_state();
    append_token(c, basis, zero, zero);  // evicts position 2 (zero)
    EXPECT_EQ(c.key_state().coeffs, s.coeffs);
    EXPECT_EQ(c.key_state().token_count, s.token_count + 1);
}

TEST(Append, StreamingMatchesBatchPrefill) {
    std::mt19937_64 rng(6);
    PartitionConfig p{4, 16, 256, 12};
    FourierBasis basis(12, 256);
    const auto lay = one_head(p, 8, {0, 3, 5, 6}, {1, 2, 7});
    const auto K = random_matrix(200, 8, rng), V = random_matrix(200, 8, rng);
    const auto full = prefill(K, V, lay, 0, 0, basis);
    for (std::size_t prefix : {0u, 10u, 20u, 57u, 150u}) {
        auto streamed = prefill(MatrixF(prefix, 8, std::vector<float>(K.flat().begin(), K.flat().begin() + prefix * 8)),
                                MatrixF(prefix, 8, std::vector<float>(V.flat().begin(), V.flat().begin() + prefix * 8)),
                                lay, 0, 0, basis);
        for (std::size_t t = prefix; t < 200; ++t) append_token(streamed, basis, K.row(t), V.row(t));
        ASSERT_EQ(streamed.middle_count(), full.middle_count());
        EXPECT_EQ(streamed.middle_keys_kept(), full.middle_keys_kept());
        EXPECT_EQ(streamed.middle_values_kept(), full.middle_values_kept());
        for (const auto* pair : {&streamed.key_state(), &streamed.value_state()}) {
            const auto& ref = pair == &streamed.key_state() ? full.key_state() : full.value_state();
            double scale = 0;
            for (double v : ref.coeffs.flat()) scale = std::max(scale, std::abs(v));
            for (std::size_t i = 0; i < ref.coeffs.size(); ++i)
                EXPECT_LE(std::abs(pair->coeffs.flat()[i] - ref.coeffs.flat()[i]), 1e-5 * scale) << prefix;
        }
        for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(streamed.local().position(i), full.local().position(i));
    }
}

TEST(CacheProperty, PositionsConserved) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t init = rng() % 5, local = 1 + rng() % 12, n = rng() % 80;
        PartitionConfig p{init, local, 128, 3};
        FourierBasis basis(3, 128);
        const auto lay = one_head(p, 2, {0}, {1});
        const auto K = random_matrix(n, 2, rng), V = random_matrix(n, 2, rng);
        auto c = prefill(K, V, lay, 0, 0, basis);
        EXPECT_EQ(c.represented_positions(), n);
        for (int extra = 0; extra < 20; ++extra) {
            append_token(c, basis, K.rows() ? K.row(0) : std::span<const float>(std::vector<float>{1, 1}),
                         V.rows() ? V.row(0) : std::span<const float>(std::vector<float>{1, 1}));
            EXPECT_EQ(c.represented_positions(), n + extra + 1);
            EXPECT_EQ(c.key_state().token_count, c.value_state().token_count);
            EXPECT_LE(c.local().size(), local);
        }
    }
}

TEST(MemoryReport, AllKeptIsDense) {
    CacheLayout lay(PartitionConfig{}, 3, 2, 16);
    const auto r = memory_report(lay, 5000);
    EXPECT_DOUBLE_EQ(r.ratio_vs_full, 1.0);
    EXPECT_EQ(r.compressed_fraction, 0.0);
    EXPECT_EQ(r.spectral_floats, 0u);
}

TEST(MemoryReport, PresetFractionExactAtDim80) {
    // 0.9/0.95, 0.8/0.8, 0.5/0.7 of 80 are whole numbers
    const auto lay = preset_layout(80, 2, {72, 76, 64, 64, 40, 56});
    const double expect = (4 * 0.925 + 20 * 0.80 + 8 * 0.60) / 32;
    EXPECT_DOUBLE_EQ(expect, 0.765625);
    EXPECT_DOUBLE_EQ(memory_report(lay, 8192).compressed_fraction, expect);
}

TEST(MemoryReport, PresetFractionAtDim128UsesRoundedCounts) {
    // round-half-even of 115.2, 121.6, 102.4, 64, 89.6
    const auto lay = preset_layout(128, 1, {115, 122, 102, 102, 64, 90});
    EXPECT_DOUBLE_EQ(memory_report(lay, 8192).compressed_fraction, 6260.0 / 8192.0);
    EXPECT_NEAR(memory_report(lay, 8192).compressed_fraction, 0.7656, 0.002);
}

TEST(MemoryReport, RatioFallsTowardLimit) {
    const auto lay = preset_layout(80, 1, {72, 76, 64, 64, 40, 56});
    double prev = 2.0;
    for (std::size_t n : {4096u, 8192u, 16384u, 1u << 22}) {
        const auto r = memory_report(lay, n);
        EXPECT_LT(r.ratio_vs_full, prev) << n;
        prev = r.ratio_vs_full;
    }
    EXPECT_NEAR(prev, 1.0 - 0.765625, 0.01);
}

TEST(MemoryReport, SpectralFloatsIndependentOfLength) {
    const auto lay = preset_layout(80, 1, {72, 76, 64, 64, 40, 56});
    EXPECT_EQ(memory_report(lay, 2000).spectral_floats, memory_report(lay, 200000).spectral_floats);
}

TEST(MemoryReport, MatchesLiveCacheCounts) {
    std::mt19937_64 rng(8);
    PartitionConfig p{4, 16, 64, 8};
    FourierBasis basis(8, 64);
    const auto lay = one_head(p, 6, {0, 1, 2}, {5});
    const auto K = random_matrix(64, 6, rng), V = random_matrix(64, 6, rng);
    const auto c = prefill(K, V, lay, 0, 0, basis);
    const auto r = memory_report(lay, 64);
    EXPECT_EQ(r.exact_floats, c.exact_floats());
    EXPECT_EQ(r.spectral_floats, c.spectral_floats());
    EXPECT_EQ(r.full_cache_floats, 2u * 64 * 6);
}
