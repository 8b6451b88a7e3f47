#pragma once

// Translated-Fourier (FourierT) compression of a token sequence into a fixed
// number of real spectral coefficients, plus the inverse used at attention time.
//
// Basis rows come in cos/sin pairs: row 2n is cos(2*pi*n*t/T), row 2n+1 is
// sin(2*pi*n*t/T), for orders n in [0, k). Columns are indexed by absolute
// token position, so a streaming fold and a batch compression of the same
// tokens produce the same coefficients.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/matrix.hpp"

namespace fourier_kv {

using Position = std::int64_t;

enum class ReconMode {
    /// (1/k) * F^T * coeffs, exactly as the compression rule is usually written.
    PaperLiteral,
    /// Standard DFT weights (1/T for order 0 and Nyquist, 2/T otherwise). Exact
    /// inverse for band-limited signals folded over one full period.
    Normalized,
};

inline const char* to_string(ReconMode m) {
    return m == ReconMode::PaperLiteral ? "paper" : "normalized";
}

class FourierBasis {
public:
    FourierBasis(std::size_t states, std::size_t window) : k_(states), window_(window) {
        if (states == 0) throw std::invalid_argument("FourierBasis: state count k must be >= 1");
        if (window == 0) throw std::invalid_argument("FourierBasis: window T must be >= 1");
        // One period of cos/sin at the fundamental; order n at position t reads
        // entry (n*t) mod T, which keeps phases exact for large t.
        cos_.resize(window);
        sin_.resize(window);
        for (std::size_t j = 0; j < window; ++j) {
            const double phase = 2.0 * std::numbers::pi * static_cast<double>(j) /
                                 static_cast<double>(window);
            cos_[j] = j == 0 ? 1.0 : std::cos(phase);
            sin_[j] = j == 0 ? 0.0 : std::sin(phase);
        }
    }

    std::size_t states() const noexcept { return k_; }
    std::size_t window() const noexcept { return window_; }
    std::size_t rows() const noexcept { return 2 * k_; }

    double value(std::size_t row, Position t) const {
        const std::size_t n = row / 2;
        const std::size_t idx = phase_index(n, t);
        return (row % 2 == 0) ? cos_[idx] : sin_[idx];
    }

    /// Writes the 2k-vector f_t into `out`.
    void column(Position t, std::span<double> out) const {
        if (out.size() != rows()) throw std::invalid_argument("FourierBasis::column: bad output size");
        for (std::size_t n = 0; n < k_; ++n) {
            const std::size_t idx = phase_index(n, t);
            out[2 * n] = cos_[idx];
            out[2 * n + 1] = sin_[idx];
        }
    }

    std::vector<double> column(Position t) const {
        std::vector<double> out(rows());
        column(t, out);
        return out;
    }

    /// 2k x count block of the operator covering positions first..first+count-1.
    MatrixD block(Position first, std::size_t count) const {
        MatrixD out(rows(), count);
        std::vector<double> col(rows());
        for (std::size_t j = 0; j < count; ++j) {
            column(first + static_cast<Position>(j), col);
            for (std::size_t r = 0; r < rows(); ++r) out(r, j) = col[r];
        }
        return out;
    }

    /// Reconstruction weight applied to row `row` of the coefficients.
    double weight(std::size_t row, ReconMode mode) const {
        if (mode == ReconMode::PaperLiteral) return 1.0 / static_cast<double>(k_);
        const std::size_t n = row / 2;
        const double inv_t = 1.0 / static_cast<double>(window_);
        if (n == 0 || 2 * n == window_) return inv_t;
        return 2.0 * inv_t;
    }

private:
    std::size_t phase_index(std::size_t n, Position t) const {
        const auto w = static_cast<Position>(window_);
        Position tm = t % w;
        if (tm < 0) tm += w;
        return static_cast<std::size_t>((static_cast<std::uint64_t>(n % window_) *
                                         static_cast<std::uint64_t>(tm)) %
                                        window_);
    }

    std::size_t k_;
    std::size_t window_;
    std::vector<double> cos_;
    std::vector<double> sin_;
};

/// Fixed-size summary of the folded tokens of D channels. Coefficients
/// accumulate in double; `coeffs_f32()` is the stored/emitted form.
struct SpectralState {
    MatrixD coeffs;  // 2k x D
    std::size_t token_count = 0;
    Position first_pos = 0;

    SpectralState() = default;
    SpectralState(std::size_t rows, std::size_t dims) : coeffs(rows, dims) {}

    std::size_t dims() const noexcept { return coeffs.cols(); }
    bool empty() const noexcept { return token_count == 0; }
    Position last_pos() const noexcept {
        return first_pos + static_cast<Position>(token_count) - 1;
    }
    bool covers(Position t) const noexcept {
        return !empty() && t >= first_pos && t <= last_pos();
    }

    MatrixF coeffs_f32() const { return coeffs.cast<float>(); }
};

namespace detail {

inline void accumulate_outer(MatrixD& coeffs, std::span<const double> col,
                             std::span<const float> value) {
    for (std::size_t r = 0; r < coeffs.rows(); ++r) {
        const double f = col[r];
        auto dst = coeffs.row(r);
        for (std::size_t d = 0; d < value.size(); ++d) dst[d] += f * static_cast<double>(value[d]);
    }
}

}  // namespace detail

/// Folds rows of `values` (positions start_pos, start_pos+1, ...) into a fresh
/// state. Summation runs in ascending position order.
inline SpectralState compress_batch(const FourierBasis& basis, const MatrixF& values,
                                    Position start_pos) {
    if (start_pos < 0) throw std::invalid_argument("compress_batch: start_pos must be >= 0");
    SpectralState state(basis.rows(), values.cols());
    state.first_pos = start_pos;
    std::vector<double> col(basis.rows());
    for (std::size_t i = 0; i < values.rows(); ++i) {
        basis.column(start_pos + static_cast<Position>(i), col);
        detail::accumulate_outer(state.coeffs, col, values.row(i));
    }
    state.token_count = values.rows();
    return state;
}

/// Rank-1 update with one token. Positions must arrive contiguously.
inline void fold_token(SpectralState& state, const FourierBasis& basis,
                       std::span<const float> value, Position pos) {
    if (state.coeffs.rows() != basis.rows())
        throw std::invalid_argument("fold_token: state rows do not match basis");
    if (value.size() != state.dims())
        throw std::invalid_argument("fold_token: value width " + std::to_string(value.size()) +
                                    " != state dims " + std::to_string(state.dims()));
    if (state.empty()) {
        if (pos < 0) throw std::invalid_argument("fold_token: negative position");
        state.first_pos = pos;
    } else if (pos != state.last_pos() + 1) {
        throw std::logic_error("fold_token: non-contiguous position " + std::to_string(pos) +
                               " (expected " + std::to_string(state.last_pos() + 1) + ")");
    }
    std::vector<double> col(basis.rows());
    basis.column(pos, col);
    detail::accumulate_outer(state.coeffs, col, value);
    ++state.token_count;
}

/// Coefficients pre-multiplied by the per-row reconstruction weight, so one
/// decompressed row is a single dot product with the basis column.
inline MatrixD weighted_coefficients(const SpectralState& state, const FourierBasis& basis,
                                     ReconMode mode) {
    MatrixD w = state.coeffs;
    for (std::size_t r = 0; r < w.rows(); ++r) {
        const double s = basis.weight(r, mode);
        for (double& v : w.row(r)) v *= s;
    }
    return w;
}

inline void decompress_row(const MatrixD& weighted, std::span<const double> col,
                           std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r = 0; r < weighted.rows(); ++r) {
        const double f = col[r];
        auto src = weighted.row(r);
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += f * src[d];
    }
}

inline MatrixF reconstruct(const SpectralState& state, const FourierBasis& basis,
                           std::span<const Position> positions,
                           ReconMode mode = ReconMode::Normalized) {
    for (Position t : positions) {
        if (!state.covers(t))
            throw std::out_of_range("reconstruct: position " + std::to_string(t) +
                                    " outside folded range");
    }
    const MatrixD weighted = weighted_coefficients(state, basis, mode);
    MatrixF out(positions.size(), state.dims());
    std::vector<double> col(basis.rows());
    std::vector<double> row(state.dims());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        basis.column(positions[i], col);
        decompress_row(weighted, col, row);
        auto dst = out.row(i);
        for (std::size_t d = 0; d < row.size(); ++d) dst[d] = static_cast<float>(row[d]);
    }
    return out;
}

/// Reconstructs every folded position, first_pos..last_pos.
inline MatrixF reconstruct_all(const SpectralState& state, const FourierBasis& basis,
                               ReconMode mode = ReconMode::Normalized) {
    std::vector<Position> pos(state.token_count);
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = state.first_pos + static_cast<Position>(i);
    return reconstruct(state, basis, pos, mode);
}

inline std::vector<double> reconstruction_mse(const MatrixF& original, const MatrixF& reconstructed) {
    require_same_shape(original.rows(), original.cols(), reconstructed.rows(), reconstructed.cols(),
                       "reconstruction_mse");
    std::vector<double> mse(original.cols(), 0.0);
    if (original.rows() == 0) return mse;
    for (std::size_t t = 0; t < original.rows(); ++t) {
        auto a = original.row(t);
        auto b = reconstructed.row(t);
        for (std::size_t d = 0; d < mse.size(); ++d) {
            const double e = static_cast<double>(a[d]) - static_cast<double>(b[d]);
            mse[d] += e * e;
        }
    }
    for (double& m : mse) m /= static_cast<double>(original.rows());
    return mse;
}

}  // namespace fourier_kv
