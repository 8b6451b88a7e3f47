#include "fourier_kv/spectral.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"

using namespace fourier_kv;

namespace {

MatrixF to_matrix(const std::vector<std::vector<float>>& rows) {
    MatrixF m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

MatrixF random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    MatrixF m(rows, cols);
    for (float& v : m.flat()) v = static_cast<float>(nd(rng));
    return m;
}

}  // namespace

TEST(FourierBasis, ColumnAtOriginIsCosOneSinZero) {
    FourierBasis b(2, 8);
    EXPECT_EQ(b.column(0), (std::vector<double>{1, 0, 1, 0}));
}

TEST(FourierBasis, ColumnAtQuarterPeriod) {
    FourierBasis b(2, 8);
    const auto c = b.column(2);
    const std::vector<double> want{1, 0, 0, 1};
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(c[r], want[r], 1e-12) << "row " << r;
}

TEST(FourierBasis, OrderZeroOnlyBlock) {
    FourierBasis b(1, 4);
    const MatrixD m = b.block(0, 4);
    EXPECT_EQ(m, (MatrixD{{1, 1, 1, 1}, {0, 0, 0, 0}}));
}

TEST(FourierBasis, RejectsZeroGeometry) {
    EXPECT_THROW(FourierBasis(0, 8), std::invalid_argument);
    EXPECT_THROW(FourierBasis(2, 0), std::invalid_argument);
}

TEST(FourierBasis, RowsMatchDirectTrigIncludingLargePositions) {
    FourierBasis b(7, 4096);
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<long long> pos(0, 5'000'000);
    for (int trial = 0; trial < 200; ++trial) {
        const long long t = pos(rng);
        const auto c = b.column(t);
        for (std::size_t r = 0; r < c.size(); ++r)
            ASSERT_NEAR(c[r], static_cast<double>(oracle::fourier_entry(r, t, 4096)), 1e-12) << "t=" << t << " r=" << r;
    }
}

TEST(FourierBasis, Periodicity) {
    FourierBasis b(5, 97);
    for (Position t = 0; t < 300; ++t) {
        const auto a = b.column(t), c = b.column(t + 97), m = b.column(t % 97);
        for (std::size_t r = 0; r < a.size(); ++r) {
            EXPECT_NEAR(a[r], c[r], 1e-6);
            EXPECT_NEAR(a[r], m[r], 1e-6);
        }
    }
}

TEST(CompressBatch, SingleRowIsOuterProduct) {
    FourierBasis b(3, 16);
    const MatrixF v{{0.5f, -2.0f, 3.0f}};
    const auto st = compress_batch(b, v, 5);
    const auto col = b.column(5);
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(st.coeffs(r, d), col[r] * v(0, d));
    EXPECT_EQ(st.token_count, 1u);
    EXPECT_EQ(st.first_pos, 5);
    EXPECT_EQ(st.last_pos(), 5);
}

TEST(CompressBatch, EmptyInputGivesZeroState) {
    FourierBasis b(3, 16);
    const auto st = compress_batch(b, MatrixF(0, 4), 7);
    EXPECT_EQ(st.token_count, 0u);
    EXPECT_TRUE(st.empty());
    for (double c : st.coeffs.flat()) EXPECT_EQ(c, 0.0);
}

TEST(CompressBatch, ConstantOverOnePeriod) {
    // oracle: direct sum over one period; frozen value [8, 0, 0, 0]
    std::vector<std::vector<float>> rows(8, std::vector<float>{1.0f});
    const auto expect = oracle::direct_fourier_sum(2, 8, rows, 0);
    const std::vector<double> frozen{8, 0, 0, 0};
    for (std::size_t r = 0; r < 4; ++r) ASSERT_NEAR(expect[r][0], frozen[r], 1e-12);

    const auto st = compress_batch(FourierBasis(2, 8), to_matrix(rows), 0);
    for (std::size_t r = 0; r < 4; ++r) EXPECT_NEAR(st.coeffs(r, 0), frozen[r], 1e-12);
}

TEST(CompressBatch, MatchesDirectSumOracle) {
    std::mt19937_64 rng(3);
    const MatrixF x = random_matrix(50, 6, rng);
    std::vector<std::vector<float>> rows(50);
    for (std::size_t i = 0; i < 50; ++i) rows[i].assign(x.row(i).begin(), x.row(i).end());
    const auto expect = oracle::direct_fourier_sum(5, 64, rows, 1000);
    const auto st = compress_batch(FourierBasis(5, 64), x, 1000);
    for (std::size_t r = 0; r < 10; ++r)
        for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(st.coeffs(r, d), expect[r][d], 1e-9);
}

TEST(FoldToken, IntoEmptyEqualsSingleRowBatch) {
    FourierBasis b(4, 32);
    const MatrixF v{{1.5f, -0.25f}};
    SpectralState st(b.rows(), 2);
    fold_token(st, b, v.row(0), 9);
    EXPECT_EQ(st.coeffs, compress_batch(b, v, 9).coeffs);
    EXPECT_EQ(st.first_pos, 9);
}

TEST(FoldToken, SequentialFoldIsBitwiseBatch) {
    std::mt19937_64 rng(5);
    FourierBasis b(6, 200);
    const MatrixF x = random_matrix(120, 5, rng);
    SpectralState st(b.rows(), 5);
    for (std::size_t i = 0; i < x.rows(); ++i) fold_token(st, b, x.row(i), 17 + static_cast<Position>(i));
    const auto batch = compress_batch(b, x, 17);
    EXPECT_EQ(st.coeffs, batch.coeffs);
    EXPECT_EQ(st.token_count, batch.token_count);
    EXPECT_EQ(st.last_pos(), batch.last_pos());
}

TEST(FoldToken, ZeroVectorOnlyAdvancesCount) {
    std::mt19937_64 rng(6);
    FourierBasis b(3, 40);
    auto st = compress_batch(b, random_matrix(10, 3, rng), 0);
    const auto before = st.coeffs;
    const std::vector<float> zero(3, 0.0f);
    fold_token(st, b, zero, 10);
    EXPECT_EQ(st.coeffs, before);
    EXPECT_EQ(st.token_count, 11u);
    EXPECT_EQ(st.last_pos(), 10);
}

TEST(FoldToken, RejectsGapsAndWidthMismatch) {
    FourierBasis b(2, 16);
    SpectralState st(b.rows(), 2);
    const std::vector<float> v{1, 2};
    fold_token(st, b, v, 3);
    EXPECT_THROW(fold_token(st, b, v, 5), std::logic_error);
    EXPECT_THROW(fold_token(st, b, v, 3), std::logic_error);
    const std::vector<float> wide{1, 2, 3};
    EXPECT_THROW(fold_token(st, b, wide, 4), std::invalid_argument);
}

TEST(FoldToken, ChunkedAccumulationWithinTolerance) {
    // fold order differs from one batch pass: chunks summed back to front
    std::mt19937_64 rng(8);
    FourierBasis b(8, 512);
    const MatrixF x = random_matrix(400, 4, rng);
    const auto whole = compress_batch(b, x, 0);
    MatrixD acc(b.rows(), 4);
    for (std::size_t start = 400; start > 0;) {
        const std::size_t n = std::min<std::size_t>(37, start);
        start -= n;
        MatrixF part(n, 4);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < 4; ++d) part(i, d) = x(start + i, d);
        const auto s = compress_batch(b, part, static_cast<Position>(start));
        for (std::size_t i = 0; i < acc.size(); ++i) acc.flat()[i] += s.coeffs.flat()[i];
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < acc.size(); ++i) {
        num += std::pow(acc.flat()[i] - whole.coeffs.flat()[i], 2);
        den += std::pow(whole.coeffs.flat()[i], 2);
    }
    EXPECT_LT(std::sqrt(num / den), 1e-5);
}

TEST(Reconstruct, ConstantOverFullPeriodNormalized) {
    FourierBasis b(2, 8);
    const auto st = compress_batch(b, MatrixF(8, 1, 1.0f), 0);
    const auto r = reconstruct_all(st, b, ReconMode::Normalized);
    for (std::size_t t = 0; t < 8; ++t) EXPECT_NEAR(r(t, 0), 1.0, 1e-6);
}

TEST(Reconstruct, InBandToneRecoveredExactly) {
    for (std::size_t k : {2u, 3u, 4u}) {
        FourierBasis b(k, 8);
        MatrixF x(8, 1);
        for (std::size_t t = 0; t < 8; ++t) x(t, 0) = static_cast<float>(std::cos(2 * std::numbers::pi * t / 8.0));
        // oracle: least-squares projection onto the same span reproduces the tone
        std::vector<double> y(8);
        for (std::size_t t = 0; t < 8; ++t) y[t] = x(t, 0);
        const auto fit = oracle::fourier_ls_fit(y, k, 8, 0);
        const auto r = reconstruct_all(compress_batch(b, x, 0), b);
        for (std::size_t t = 0; t < 8; ++t) {
            ASSERT_NEAR(fit[t], y[t], 1e-7);  // y holds float-rounded samples
            EXPECT_NEAR(r(t, 0), x(t, 0), 1e-6) << "k=" << k << " t=" << t;
        }
    }
}

TEST(Reconstruct, PaperLiteralSingleToken) {
    FourierBasis b(3, 20);
    const MatrixF v{{2.0f, -1.0f}};
    const Position t = 7;
    const auto st = compress_batch(b, v, t);
    const std::vector<Position> at{t};
    const auto r = reconstruct(st, b, at, ReconMode::PaperLiteral);
    double norm2 = 0;
    for (double c : b.column(t)) norm2 += c * c;
    for (std::size_t d = 0; d < 2; ++d) EXPECT_NEAR(r(0, d), norm2 / 3.0 * v(0, d), 1e-6);
}

TEST(Reconstruct, RejectsPositionsOutsideFoldedRange) {
    FourierBasis b(2, 16);
    const auto st = compress_batch(b, MatrixF(4, 1, 1.0f), 3);
    const std::vector<Position> before{2}, after{7}, inside{3, 6};
    EXPECT_THROW(reconstruct(st, b, before), std::out_of_range);
    EXPECT_THROW(reconstruct(st, b, after), std::out_of_range);
    EXPECT_NO_THROW(reconstruct(st, b, inside));
    const SpectralState empty(b.rows(), 1);
    EXPECT_THROW(reconstruct(empty, b, inside), std::out_of_range);
}

TEST(ReconstructProperty, BandLimitedExactness) {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::size_t> pick_t(8, 300), pick_start(0, 10000);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t T = pick_t(rng);
        const std::size_t k = 1 + rng() % (T / 2);
        const std::size_t band = 1 + rng() % k;
        const auto start = static_cast<Position>(pick_start(rng));
        std::normal_distribution<double> nd;
        std::vector<double> a(band), c(band);
        for (std::size_t n = 0; n < band; ++n) {
            a[n] = nd(rng);
            c[n] = nd(rng);
        }
        MatrixF x(T, 1);
        for (std::size_t i = 0; i < T; ++i) {
            double v = 0;
            for (std::size_t n = 0; n < band; ++n) {
                const auto row_c = static_cast<double>(oracle::fourier_entry(2 * n, start + static_cast<long long>(i), T));
                const auto row_s = static_cast<double>(oracle::fourier_entry(2 * n + 1, start + static_cast<long long>(i), T));
                v += a[n] * row_c + c[n] * row_s;
            }
            x(i, 0) = static_cast<float>(v);
        }
        FourierBasis b(k, T);
        const auto r = reconstruct_all(compress_batch(b, x, start), b);
        for (std::size_t i = 0; i < T; ++i)
            ASSERT_NEAR(r(i, 0), x(i, 0), 1e-5) << "T=" << T << " k=" << k << " band=" << band;
    }
}

TEST(ReconstructProperty, NormalizedEqualsLeastSquaresOverFullPeriod) {
    std::mt19937_64 rng(4);
    const std::size_t T = 64;
    const MatrixF x = random_matrix(T, 1, rng);
    std::vector<double> y(T);
    for (std::size_t i = 0; i < T; ++i) y[i] = x(i, 0);
    for (std::size_t k : {1u, 3u, 10u, 32u}) {
        FourierBasis b(k, T);
        const auto r = reconstruct_all(compress_batch(b, x, 100), b);
        const auto fit = oracle::fourier_ls_fit(y, k, T, 100);
        for (std::size_t i = 0; i < T; ++i) EXPECT_NEAR(r(i, 0), fit[i], 1e-5) << "k=" << k;
    }
}

TEST(ReconstructProperty, MseNonIncreasingInK) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t T = 48;
        const MatrixF x = random_matrix(T, 3, rng);
        std::vector<double> prev(3, INFINITY);
        for (std::size_t k = 1; k <= T / 2 + 1; ++k) {
            FourierBasis b(k, T);
            const auto mse = reconstruction_mse(x, reconstruct_all(compress_batch(b, x, 0), b));
            for (std::size_t d = 0; d < 3; ++d) {
                EXPECT_LE(mse[d], prev[d] + 1e-9) << "k=" << k;
                prev[d] = mse[d];
            }
        }
        for (double m : prev) EXPECT_LT(m, 1e-9);  // full basis is lossless
    }
}

TEST(ReconstructProperty, ScalingIsLinear) {
    std::mt19937_64 rng(9);
    FourierBasis b(5, 100);
    const MatrixF x = random_matrix(70, 4, rng);
    const auto base = reconstruct_all(compress_batch(b, x, 10), b);
    for (float alpha : {2.0f, 0.5f, -4.0f}) {
        MatrixF y = x;
        for (float& v : y.flat()) v *= alpha;
        const auto r = reconstruct_all(compress_batch(b, y, 10), b);
        for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r.flat()[i], alpha * base.flat()[i]);
    }
    MatrixF y = x;
    for (float& v : y.flat()) v *= 3.0f;
    const auto r = reconstruct_all(compress_batch(b, y, 10), b);
    for (std::size_t i = 0; i < r.size(); ++i) EXPECT_NEAR(r.flat()[i], 3.0f * base.flat()[i], 1e-5);
}

TEST(ReconstructionMse, IdenticalIsZero) {
    std::mt19937_64 rng(1);
    const MatrixF x = random_matrix(10, 3, rng);
    for (double m : reconstruction_mse(x, x)) EXPECT_EQ(m, 0.0);
}

TEST(ReconstructionMse, ZeroVersusConstant) {
    for (double m : reconstruction_mse(MatrixF(6, 4, 0.0f), MatrixF(6, 4, 1.5f))) EXPECT_DOUBLE_EQ(m, 2.25);
}

TEST(ReconstructionMse, MatchesTwoLoopOracle) {
    std::mt19937_64 rng(2);
    const MatrixF a = random_matrix(16, 4, rng), b = random_matrix(16, 4, rng);
    const auto got = reconstruction_mse(a, b);
    for (std::size_t d = 0; d < 4; ++d) {
        long double s = 0;
        for (std::size_t t = 0; t < 16; ++t) s += std::pow(static_cast<long double>(a(t, d)) - b(t, d), 2);
        EXPECT_NEAR(got[d], static_cast<double>(s / 16), 1e-7);
    }
}

TEST(ReconstructionMse, ShapeMismatchThrows) {
    EXPECT_THROW(reconstruction_mse(MatrixF(3, 2), MatrixF(3, 3)), std::invalid_argument);
}
