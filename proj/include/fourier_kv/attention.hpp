#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/cache.hpp"
#include "fourier_kv/matrix.hpp"
#include "fourier_kv/spectral.hpp"
#include "fourier_kv/trace.hpp"

namespace fourier_kv {

struct AttentionOutput {
    MatrixF o;        // queries x value_dim
    MatrixD weights;  // queries x keys; empty unless requested
};

namespace detail {

inline void require_finite(std::span<const float> xs, const char* what) {
    for (float x : xs)
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

inline double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

/// Running max / normalizer / weighted sum for one query.
struct OnlineSoftmax {
    double max = -std::numeric_limits<double>::infinity();
    double denom = 0.0;
    std::vector<double> acc;

    explicit OnlineSoftmax(std::size_t dv) : acc(dv, 0.0) {}

    /// Raises the running max to cover `block_max`, rescaling what is already summed.
    void rebase(double block_max) {
        if (block_max <= max) return;
        const double f = std::isinf(max) ? 0.0 : std::exp(max - block_max);
        denom *= f;
        for (double& a : acc) a *= f;
        max = block_max;
    }

    double weight(double score) const { return std::exp(score - max); }

    std::vector<float> finish() const {
        std::vector<float> out(acc.size());
        for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] / denom);
        return out;
    }
};

}  // namespace detail

inline std::size_t kv_head_for(std::size_t query_head, std::size_t heads, std::size_t kv_heads) {
    if (kv_heads == 0 || heads % kv_heads != 0) throw std::invalid_argument("kv_head_for: kv_heads must divide heads");
    return query_head / (heads / kv_heads);
}

/// Scaled dot-product attention, scale 1/sqrt(d). Keys sit at positions
/// 0..n-1. With `causal`, query i at `query_positions[i]` (default: the last
/// q.rows() positions) sees only keys at positions <= its own.
inline AttentionOutput attend_full(const MatrixF& q, const MatrixF& keys, const MatrixF& values, bool causal = false,
                                   std::span<const Position> query_positions = {}, bool keep_weights = false) {
    if (q.cols() != keys.cols()) throw std::invalid_argument("attend_full: query/key width mismatch");
    if (keys.rows() != values.rows()) throw std::invalid_argument("attend_full: key/value count mismatch");
    if (keys.rows() == 0) throw std::invalid_argument("attend_full: no keys");
    if (!query_positions.empty() && query_positions.size() != q.rows())
        throw std::invalid_argument("attend_full: query_positions size mismatch");
    detail::require_finite(q.flat(), "attend_full");
    detail::require_finite(keys.flat(), "attend_full");
    detail::require_finite(values.flat(), "attend_full");

    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const std::size_t n = keys.rows();
    AttentionOutput out{MatrixF(q.rows(), values.cols()), keep_weights ? MatrixD(q.rows(), n) : MatrixD{}};
    std::vector<double> s(n), acc(values.cols());
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::size_t visible = n;
        if (causal) {
            const Position p = query_positions.empty()
                                   ? static_cast<Position>(n - q.rows() + i)
                                   : query_positions[i];
            if (p < 0) throw std::invalid_argument("attend_full: negative query position");
            visible = std::min<std::size_t>(n, static_cast<std::size_t>(p) + 1);
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < visible; ++j) {
            s[j] = detail::dot(q.row(i), keys.row(j)) * scale;
            mx = std::max(mx, s[j]);
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
            s[j] = std::exp(s[j] - mx);
            denom += s[j];
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < visible; ++j) {
            const double p = s[j] / denom;
            if (keep_weights) out.weights(i, j) = p;
            auto v = values.row(j);
            for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += p * static_cast<double>(v[c]);
        }
        for (std::size_t c = 0; c < acc.size(); ++c) out.o(i, c) = static_cast<float>(acc[c]);
    }
    return out;
}

inline MatrixF as_row(std::span<const float> v) {
    return MatrixF(1, v.size(), std::vector<float>(v.begin(), v.end()));
}

struct ReconstructedCache {
    MatrixF keys;    // length x d: initial, middle, local
    MatrixF values;
};

inline void check_basis(const HeadCache& cache, const FourierBasis& basis) {
    if (basis.states() != cache.partition().states || basis.window() != cache.partition().window)
        throw std::invalid_argument("basis k/T do not match the cache partition");
}

/// Dense K~ and V~ for every represented position, middle rows rebuilt from
/// kept dims plus decompressed spectral dims.
inline ReconstructedCache materialize(const HeadCache& cache, const FourierBasis& basis, ReconMode mode) {
    check_basis(cache, basis);
    const std::size_t d = cache.head_dim();
    const std::size_t n = cache.represented_positions();
    ReconstructedCache rc{MatrixF(n, d), MatrixF(n, d)};
    std::size_t row = 0;
    for (std::size_t i = 0; i < cache.initial_keys().rows(); ++i, ++row) {
        std::ranges::copy(cache.initial_keys().row(i), rc.keys.row(row).begin());
        std::ranges::copy(cache.initial_values().row(i), rc.values.row(row).begin());
    }
    const std::size_t mid = cache.middle_count();
    if (mid > 0) {
        const MatrixF kc = reconstruct_all(cache.key_state(), basis, mode);
        const MatrixF vc = reconstruct_all(cache.value_state(), basis, mode);
        for (std::size_t i = 0; i < mid; ++i, ++row) {
            auto kr = rc.keys.row(row);
            auto vr = rc.values.row(row);
            for (std::size_t j = 0; j < cache.k_kept().size(); ++j) kr[cache.k_kept()[j]] = cache.middle_keys_kept()(i, j);
            for (std::size_t j = 0; j < cache.k_compressed().size(); ++j) kr[cache.k_compressed()[j]] = kc(i, j);
            for (std::size_t j = 0; j < cache.v_kept().size(); ++j) vr[cache.v_kept()[j]] = cache.middle_values_kept()(i, j);
            for (std::size_t j = 0; j < cache.v_compressed().size(); ++j) vr[cache.v_compressed()[j]] = vc(i, j);
        }
    }
    for (std::size_t i = 0; i < cache.local().size(); ++i, ++row) {
        std::ranges::copy(cache.local().key(i), rc.keys.row(row).begin());
        std::ranges::copy(cache.local().value(i), rc.values.row(row).begin());
    }
    return rc;
}

/// Decode-step attention over the reconstructed cache, concatenated in
/// (initial, middle, local) order.
inline AttentionOutput attend_compressed_materialized(std::span<const float> q, const HeadCache& cache,
                                                      const FourierBasis& basis, ReconMode mode = ReconMode::Normalized,
                                                      bool keep_weights = false) {
    if (q.size() != cache.head_dim()) throw std::invalid_argument("attend_compressed_materialized: query width");
    const ReconstructedCache rc = materialize(cache, basis, mode);
    return attend_full(as_row(q), rc.keys, rc.values, false, {}, keep_weights);
}

/// Instrumentation of the fused path. Transient floats count the
/// decompression buffer plus the spectral states loaded for this query.
struct FusedStats {
    std::size_t state_loads = 0;          // times the spectral states were read
    std::size_t state_floats = 0;         // 2k * (|Kc| + |Vc|)
    std::size_t peak_buffer_floats = 0;   // decompressed middle values held at once
    std::size_t tiles = 0;

    std::size_t peak_transient_floats() const noexcept { return state_floats + peak_buffer_floats; }
};

/// Streaming-softmax attention that decompresses the middle region tile by
/// tile straight from the spectral states, never building K~ or V~. Each
/// tile first rebuilds its compressed K dims to score the tile, then reuses
/// the same buffer for the compressed V dims.
inline AttentionOutput attend_compressed_fused(std::span<const float> q, const HeadCache& cache,
                                               const FourierBasis& basis, ReconMode mode, std::size_t tile,
                                               FusedStats* stats = nullptr) {
    if (tile == 0) throw std::invalid_argument("attend_compressed_fused: tile must be >= 1");
    if (q.size() != cache.head_dim()) throw std::invalid_argument("attend_compressed_fused: query width");
    check_basis(cache, basis);
    detail::require_finite(q, "attend_compressed_fused");

    const std::size_t d = cache.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto& kc = cache.k_compressed();
    const auto& vc = cache.v_compressed();
    const auto& ku = cache.k_kept();
    const auto& vu = cache.v_kept();

    FusedStats local_stats;
    detail::OnlineSoftmax sm(d);

    auto exact_row = [&](std::span<const float> k, std::span<const float> v) {
        const double s = detail::dot(q, k) * scale;
        sm.rebase(s);
        const double p = sm.weight(s);
        sm.denom += p;
        for (std::size_t c = 0; c < d; ++c) sm.acc[c] += p * static_cast<double>(v[c]);
    };

    for (std::size_t i = 0; i < cache.initial_keys().rows(); ++i)
        exact_row(cache.initial_keys().row(i), cache.initial_values().row(i));

    const std::size_t mid = cache.middle_count();
    if (mid > 0) {
        // single read of both states, pre-weighted for the chosen inverse
        const MatrixD wk = weighted_coefficients(cache.key_state(), basis, mode);
        const MatrixD wv = weighted_coefficients(cache.value_state(), basis, mode);
        local_stats.state_loads = 1;
        local_stats.state_floats = wk.size() + wv.size();

        const std::size_t rows = std::min(tile, mid);
        const std::size_t width = std::max(kc.size(), vc.size());
        MatrixF buf(rows, width);
        local_stats.peak_buffer_floats = buf.size();
        std::vector<double> col(basis.rows()), dec(width), scores(rows);
        const Position first = cache.middle_first();

        for (std::size_t start = 0; start < mid; start += rows) {
            const std::size_t count = std::min(rows, mid - start);
            ++local_stats.tiles;
            double tile_max = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < count; ++r) {
                const std::size_t i = start + r;
                basis.column(first + static_cast<Position>(i), col);
                auto out = std::span<double>(dec).first(kc.size());
                decompress_row(wk, col, out);
                auto b = buf.row(r);
                for (std::size_t j = 0; j < kc.size(); ++j) b[j] = static_cast<float>(out[j]);
                double s = 0.0;
                auto kept = cache.middle_keys_kept().row(i);
                for (std::size_t j = 0; j < ku.size(); ++j) s += static_cast<double>(q[ku[j]]) * kept[j];
                for (std::size_t j = 0; j < kc.size(); ++j) s += static_cast<double>(q[kc[j]]) * b[j];
                scores[r] = s * scale;
                tile_max = std::max(tile_max, scores[r]);
            }
            sm.rebase(tile_max);
            for (std::size_t r = 0; r < count; ++r) {
                const std::size_t i = start + r;
                basis.column(first + static_cast<Position>(i), col);
                auto out = std::span<double>(dec).first(vc.size());
                decompress_row(wv, col, out);
                auto b = buf.row(r);
                for (std::size_t j = 0; j < vc.size(); ++j) b[j] = static_cast<float>(out[j]);
                const double p = sm.weight(scores[r]);
                sm.denom += p;
                auto kept = cache.middle_values_kept().row(i);
                for (std::size_t j = 0; j < vu.size(); ++j) sm.acc[vu[j]] += p * static_cast<double>(kept[j]);
                for (std::size_t j = 0; j < vc.size(); ++j) sm.acc[vc[j]] += p * static_cast<double>(b[j]);
            }
        }
    }

    for (std::size_t i = 0; i < cache.local().size(); ++i) exact_row(cache.local().key(i), cache.local().value(i));

    if (stats) *stats = local_stats;
    const auto o = sm.finish();
    return {MatrixF(1, d, std::vector<float>(o.begin(), o.end())), {}};
}

struct ScoreComponents {
    std::vector<double> low;   // dims [0, split)
    std::vector<double> high;  // dims [split, d)
    std::vector<double> full;
};

/// Splits q.K^T * scale into the contribution of the lower and upper dims.
/// split = d is accepted and yields an all-zero upper component.
inline ScoreComponents decompose_scores(std::span<const float> q, const MatrixF& keys, std::size_t split) {
    const std::size_t d = q.size();
    if (keys.cols() != d) throw std::invalid_argument("decompose_scores: query/key width mismatch");
    if (split == 0 || split > d)
        throw std::out_of_range("decompose_scores: split " + std::to_string(split) + " outside (0, " +
                                std::to_string(d) + "]");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    ScoreComponents sc{std::vector<double>(keys.rows()), std::vector<double>(keys.rows()),
                       std::vector<double>(keys.rows())};
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        auto k = keys.row(j);
        const double lo = detail::dot(q.first(split), k.first(split));
        const double hi = detail::dot(q.subspan(split), k.subspan(split));
        sc.low[j] = lo * scale;
        sc.high[j] = hi * scale;
        sc.full[j] = detail::dot(q, k) * scale;
    }
    return sc;
}

/// Copy of `trace` with N(0, sigma^2) noise added to `dims` of every K
/// channel (and V when `include_values`). Deterministic per seed.
inline KVTrace perturb_dims(const KVTrace& trace, const std::vector<std::size_t>& dims, double sigma, std::uint64_t seed,
                            bool include_values = false) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("perturb_dims: sigma must be >= 0");
    for (std::size_t dim : dims)
        if (dim >= trace.head_dim()) throw std::out_of_range("perturb_dims: dim out of range");
    KVTrace out = trace;
    if (sigma == 0.0 || dims.empty()) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (std::size_t l = 0; l < trace.layers(); ++l)
        for (CacheKind kind : {CacheKind::Key, CacheKind::Value}) {
            if (kind == CacheKind::Value && !include_values) continue;
            for (std::size_t h = 0; h < trace.kv_heads(); ++h)
                for (std::size_t t = 0; t < trace.seq_len(); ++t)
                    for (std::size_t dim : dims)
                        out.at(l, kind, h, t, dim) = static_cast<float>(out.at(l, kind, h, t, dim) + noise(rng));
        }
    return out;
}

struct Divergence {
    double max_abs = 0.0;
    double rmse = 0.0;
    double cosine = 1.0;
};

inline Divergence output_divergence(std::span<const float> reference, std::span<const float> candidate) {
    if (reference.size() != candidate.size()) throw std::invalid_argument("output_divergence: shape mismatch");
    Divergence dv;
    if (reference.empty()) return dv;
    double se = 0.0, dotp = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double a = reference[i], b = candidate[i];
        dv.max_abs = std::max(dv.max_abs, std::abs(a - b));
        se += (a - b) * (a - b);
        dotp += a * b;
        na += a * a;
        nb += b * b;
    }
    dv.rmse = std::sqrt(se / static_cast<double>(reference.size()));
    if (na == 0.0 && nb == 0.0) dv.cosine = 1.0;
    else if (na == 0.0 || nb == 0.0) dv.cosine = 0.0;
    else dv.cosine = dotp / std::sqrt(na * nb);
    return dv;
}

inline Divergence output_divergence(const AttentionOutput& reference, const AttentionOutput& candidate) {
    require_same_shape(reference.o.rows(), reference.o.cols(), candidate.o.rows(), candidate.o.cols(),
                       "output_divergence");
    return output_divergence(reference.o.flat(), candidate.o.flat());
}

}  // namespace fourier_kv
