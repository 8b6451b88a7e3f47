#pragma once

// Equal-budget reconstruction comparison of FourierT (k complex orders, 2k
// reals) against LegT (2k Legendre orders) over the same window.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/legt.hpp"
#include "fourier_kv/spectral.hpp"
#include "fourier_kv/trace.hpp"

namespace fourier_kv {

struct BasisSelection {
    std::vector<std::size_t> layers;  // empty = all
    std::vector<std::size_t> heads;
    std::vector<std::size_t> dims;
    CacheKind kind = CacheKind::Key;
};

struct BasisComparisonRow {
    std::size_t layer = 0, head = 0, dim = 0;
    double mse_fourier = 0.0;
    double mse_legt = 0.0;
};

struct BasisComparison {
    std::vector<BasisComparisonRow> rows;
    std::size_t fourier_wins = 0;  // ties count as FourierT wins

    double win_rate() const {
        return rows.empty() ? 0.0 : static_cast<double>(fourier_wins) / static_cast<double>(rows.size());
    }
};

namespace detail {

inline std::vector<std::size_t> resolve(const std::vector<std::size_t>& sel, std::size_t limit, const char* what) {
    if (sel.empty()) {
        std::vector<std::size_t> all(limit);
        for (std::size_t i = 0; i < limit; ++i) all[i] = i;
        return all;
    }
    for (std::size_t v : sel)
        if (v >= limit) throw std::out_of_range(std::string("compare_bases: ") + what + " " + std::to_string(v) + " out of range");
    return sel;
}

}  // namespace detail

/// Both bases summarize the trailing min(L, window) positions: FourierT
/// compresses exactly that block, LegT folds the whole trace and its sliding
/// window forgets the rest. MSE is measured over the same block.
/// `window` = 0 means the trace length.
inline BasisComparison compare_bases(const KVTrace& trace, std::size_t k_states, std::size_t window,
                                     const BasisSelection& sel = {}) {
    if (k_states == 0) throw std::invalid_argument("compare_bases: k must be >= 1");
    const std::size_t L = trace.seq_len();
    if (L == 0) throw std::invalid_argument("compare_bases: empty trace");
    if (window == 0) window = L;
    const auto layers = detail::resolve(sel.layers, trace.layers(), "layer");
    const auto heads = detail::resolve(sel.heads, trace.kv_heads(), "head");
    const auto dims = detail::resolve(sel.dims, trace.head_dim(), "dim");

    const FourierBasis fourier(k_states, window);
    const LegTOperator legt(2 * k_states, static_cast<double>(window));
    const std::size_t m = std::min(L, window);
    std::vector<Position> positions(m);
    for (std::size_t i = 0; i < m; ++i) positions[i] = static_cast<Position>(L - m + i);
    const auto offsets = trailing_offsets(m, window);

    BasisComparison out;
    for (std::size_t l : layers)
        for (std::size_t h : heads) {
            const MatrixF full = trace.head_matrix(l, sel.kind, h);
            MatrixF x(L, dims.size());
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t j = 0; j < dims.size(); ++j) x(t, j) = full(t, dims[j]);
            MatrixF tail(m, dims.size());
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < dims.size(); ++j) tail(i, j) = x(L - m + i, j);

            const SpectralState fs = compress_batch(fourier, tail, static_cast<Position>(L - m));
            const auto mse_f = reconstruction_mse(tail, reconstruct(fs, fourier, positions, ReconMode::Normalized));

            LegTState ls(legt.order(), dims.size());
            ls.prime(x.row(0));
            for (std::size_t t = 0; t < L; ++t) legt_fold(ls, legt, x.row(t));
            const auto mse_l = reconstruction_mse(tail, legt_reconstruct(ls, offsets).cast<float>());

            for (std::size_t j = 0; j < dims.size(); ++j) {
                out.rows.push_back({l, h, dims[j], mse_f[j], mse_l[j]});
                if (mse_f[j] <= mse_l[j]) ++out.fourier_wins;
            }
        }
    return out;
}

}  // namespace fourier_kv
