#pragma once

// Choosing which head dims to compress. Every dim is compressed and
// reconstructed on a calibration trace; the dims with the smallest
// reconstruction MSE are the ones a layer-wise ratio schema compresses.

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/cache.hpp"
#include "fourier_kv/parallel.hpp"
#include "fourier_kv/spectral.hpp"
#include "fourier_kv/trace.hpp"

namespace fourier_kv {

/// Input data inconsistent with the requested operation (too short, wrong
/// geometry). Distinct from usage errors.
class DataMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class SchemaPreset { InvertedPyramid, Uniform, KvInverted, LayerInverted, Custom };

inline const char* to_string(SchemaPreset p) {
    switch (p) {
        case SchemaPreset::InvertedPyramid: return "inverted_pyramid";
        case SchemaPreset::Uniform: return "uniform";
        case SchemaPreset::KvInverted: return "kv_inverted";
        case SchemaPreset::LayerInverted: return "layer_inverted";
        case SchemaPreset::Custom: return "custom";
    }
    return "?";
}

inline SchemaPreset parse_schema_preset(const std::string& s) {
    if (s == "inverted_pyramid") return SchemaPreset::InvertedPyramid;
    if (s == "uniform") return SchemaPreset::Uniform;
    if (s == "kv_inverted") return SchemaPreset::KvInverted;
    if (s == "layer_inverted") return SchemaPreset::LayerInverted;
    if (s == "custom") return SchemaPreset::Custom;
    throw std::invalid_argument("unknown schema preset: " + s);
}

struct LayerRatio {
    double k = 0.0;
    double v = 0.0;
    bool operator==(const LayerRatio&) const = default;
};

struct CompressionSchema {
    SchemaPreset preset = SchemaPreset::Custom;
    std::vector<LayerRatio> layers;

    std::size_t layer_count() const noexcept { return layers.size(); }

    void validate() const {
        for (const auto& r : layers)
            if (!(r.k >= 0.0 && r.k <= 1.0 && r.v >= 0.0 && r.v <= 1.0))
                throw std::invalid_argument("CompressionSchema: ratio outside [0,1]");
    }

    /// Channel-weighted share of K and V dims the ratios compress.
    double compressed_fraction() const {
        if (layers.empty()) return 0.0;
        double s = 0.0;
        for (const auto& r : layers) s += r.k + r.v;
        return s / (2.0 * static_cast<double>(layers.size()));
    }

    bool operator==(const CompressionSchema&) const = default;
};

/// V-heavy, lower-layer-heavy preset. At 32 layers: layers 0-3 compress
/// 90% of K / 95% of V, the last 8 layers 50% / 70%, the rest 80% / 80%.
/// Other depths keep the same proportions (first 1/8, last 1/4 of layers).
inline CompressionSchema inverted_pyramid(std::size_t layers) {
    CompressionSchema s{SchemaPreset::InvertedPyramid, std::vector<LayerRatio>(layers, {0.80, 0.80})};
    if (layers == 0) return s;
    const auto first = std::max<std::size_t>(1, static_cast<std::size_t>(std::nearbyint(layers / 8.0)));
    const auto last = std::min(layers - std::min(first, layers),
                               static_cast<std::size_t>(std::nearbyint(layers / 4.0)));
    for (std::size_t l = 0; l < std::min(first, layers); ++l) s.layers[l] = {0.90, 0.95};
    for (std::size_t l = layers - last; l < layers; ++l) s.layers[l] = {0.50, 0.70};
    return s;
}

inline CompressionSchema constant_schema(std::size_t layers, double k_ratio, double v_ratio) {
    CompressionSchema s{SchemaPreset::Custom, std::vector<LayerRatio>(layers, {k_ratio, v_ratio})};
    s.validate();
    return s;
}

struct SchemaVariants {
    CompressionSchema uniform;
    CompressionSchema kv_inverted;
    CompressionSchema layer_inverted;
};

inline SchemaVariants schema_variants(const CompressionSchema& base) {
    SchemaVariants out;
    const double mean = base.compressed_fraction();
    out.uniform = {SchemaPreset::Uniform, std::vector<LayerRatio>(base.layers.size(), {mean, mean})};
    out.kv_inverted = {SchemaPreset::KvInverted, base.layers};
    for (auto& r : out.kv_inverted.layers) std::swap(r.k, r.v);
    out.layer_inverted = {SchemaPreset::LayerInverted, {base.layers.rbegin(), base.layers.rend()}};
    return out;
}

/// ratio * d rounded half-to-even.
inline std::size_t compressed_count(double ratio, std::size_t head_dim) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("compressed_count: ratio outside [0,1]");
    const int old = std::fegetround();
    std::fesetround(FE_TONEAREST);
    const double r = std::nearbyint(ratio * static_cast<double>(head_dim));
    std::fesetround(old);
    return std::min(head_dim, static_cast<std::size_t>(r));
}

/// Per (layer, K|V, head) reconstruction MSE of every dim.
class RankTable {
public:
    RankTable() = default;
    RankTable(std::size_t layers, std::size_t kv_heads, std::size_t head_dim)
        : layers_(layers), kv_heads_(kv_heads), head_dim_(head_dim),
          mse_(layers * 2 * kv_heads, std::vector<double>(head_dim, 0.0)) {}

    std::size_t layers() const noexcept { return layers_; }
    std::size_t kv_heads() const noexcept { return kv_heads_; }
    std::size_t head_dim() const noexcept { return head_dim_; }

    std::vector<double>& mse(std::size_t layer, CacheKind kind, std::size_t head) {
        return mse_.at(index(layer, kind, head));
    }
    const std::vector<double>& mse(std::size_t layer, CacheKind kind, std::size_t head) const {
        return mse_.at(index(layer, kind, head));
    }

private:
    std::size_t index(std::size_t layer, CacheKind kind, std::size_t head) const {
        return (layer * 2 + static_cast<std::size_t>(kind)) * kv_heads_ + head;
    }

    std::size_t layers_ = 0, kv_heads_ = 0, head_dim_ = 0;
    std::vector<std::vector<double>> mse_;
};

/// Dim indices ordered by ascending MSE, ties by ascending index.
inline std::vector<std::size_t> ranked_dims(const std::vector<double>& mse) {
    std::vector<std::size_t> idx(mse.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mse[a] < mse[b]; });
    return idx;
}

/// Compresses the middle region of every (layer, K|V, head) with `basis` and
/// records the per-dim MSE of the Normalized reconstruction.
inline RankTable rank_dimensions(const KVTrace& trace, const PartitionConfig& part, const FourierBasis& basis,
                                 std::size_t threads = 1) {
    const std::size_t n = trace.seq_len();
    if (n < part.l_init + part.l_local + 1)
        throw DataMismatchError("rank_dimensions: trace length " + std::to_string(n) + " leaves no middle region (need >= " +
                                std::to_string(part.l_init + part.l_local + 1) + ")");
    const std::size_t first = part.l_init;
    const std::size_t count = n - part.l_local - part.l_init;
    RankTable table(trace.layers(), trace.kv_heads(), trace.head_dim());
    const std::size_t jobs = trace.layers() * 2 * trace.kv_heads();
    parallel_for(
        jobs,
        [&](std::size_t j) {
            const std::size_t h = j % trace.kv_heads();
            const auto kind = static_cast<CacheKind>((j / trace.kv_heads()) % 2);
            const std::size_t layer = j / (2 * trace.kv_heads());
            const MatrixF middle = trace.head_matrix(layer, kind, h, first, count);
            const SpectralState st = compress_batch(basis, middle, static_cast<Position>(first));
            const MatrixF recon = reconstruct_all(st, basis, ReconMode::Normalized);
            table.mse(layer, kind, h) = reconstruction_mse(middle, recon);
        },
        threads);
    return table;
}

/// Per (layer, head): the lowest-MSE round(ratio * d) dims become the
/// compressed sets; the rest stay exact.
inline CacheLayout apply_schema(const RankTable& ranks, const CompressionSchema& schema, const PartitionConfig& part) {
    schema.validate();
    if (schema.layer_count() != ranks.layers())
        throw DataMismatchError("apply_schema: schema has " + std::to_string(schema.layer_count()) +
                                " layers, trace has " + std::to_string(ranks.layers()));
    const std::size_t d = ranks.head_dim();
    CacheLayout layout(part, ranks.layers(), ranks.kv_heads(), d);
    for (std::size_t l = 0; l < ranks.layers(); ++l) {
        const std::size_t nk = compressed_count(schema.layers[l].k, d);
        const std::size_t nv = compressed_count(schema.layers[l].v, d);
        for (std::size_t h = 0; h < ranks.kv_heads(); ++h) {
            const auto rk = ranked_dims(ranks.mse(l, CacheKind::Key, h));
            const auto rv = ranked_dims(ranks.mse(l, CacheKind::Value, h));
            layout.set_split(l, h, {DimList(rk.begin(), rk.begin() + static_cast<std::ptrdiff_t>(nk)),
                                    DimList(rv.begin(), rv.begin() + static_cast<std::ptrdiff_t>(nv))});
        }
    }
    return layout;
}

/// Temporal standard deviation (population) of every channel.
struct StdReport {
    std::size_t layers = 0, kv_heads = 0, head_dim = 0;
    /// [layer][kind][head][dim], dim in natural order
    std::vector<double> raw;
    /// [layer][kind][rank]: per-head stds sorted descending, averaged over heads
    std::vector<double> sorted_mean;

    double at(std::size_t l, CacheKind k, std::size_t h, std::size_t d) const {
        return raw[((l * 2 + static_cast<std::size_t>(k)) * kv_heads + h) * head_dim + d];
    }
    double curve(std::size_t l, CacheKind k, std::size_t rank) const {
        return sorted_mean[(l * 2 + static_cast<std::size_t>(k)) * head_dim + rank];
    }
    double mean_std(std::size_t l, CacheKind k) const {
        double s = 0.0;
        for (std::size_t r = 0; r < head_dim; ++r) s += curve(l, k, r);
        return head_dim ? s / static_cast<double>(head_dim) : 0.0;
    }
};

inline StdReport temporal_std(const KVTrace& trace) {
    StdReport rep{trace.layers(), trace.kv_heads(), trace.head_dim(), {}, {}};
    const std::size_t d = trace.head_dim(), n = trace.seq_len();
    rep.raw.assign(trace.layers() * 2 * trace.kv_heads() * d, 0.0);
    rep.sorted_mean.assign(trace.layers() * 2 * d, 0.0);
    std::vector<double> mean(d), m2(d), sorted(d);
    for (std::size_t l = 0; l < trace.layers(); ++l)
        for (CacheKind kind : {CacheKind::Key, CacheKind::Value})
            for (std::size_t h = 0; h < trace.kv_heads(); ++h) {
                std::fill(mean.begin(), mean.end(), 0.0);
                std::fill(m2.begin(), m2.end(), 0.0);
                auto block = trace.head(l, kind, h);
                for (std::size_t t = 0; t < n; ++t)
                    for (std::size_t i = 0; i < d; ++i) mean[i] += block[t * d + i];
                for (double& m : mean) m /= static_cast<double>(n);
                for (std::size_t t = 0; t < n; ++t)
                    for (std::size_t i = 0; i < d; ++i) {
                        const double e = block[t * d + i] - mean[i];
                        m2[i] += e * e;
                    }
                for (std::size_t i = 0; i < d; ++i) {
                    const double s = std::sqrt(m2[i] / static_cast<double>(n));
                    rep.raw[((l * 2 + static_cast<std::size_t>(kind)) * trace.kv_heads() + h) * d + i] = s;
                    sorted[i] = s;
                }
                std::sort(sorted.begin(), sorted.end(), std::greater<>());
                for (std::size_t r = 0; r < d; ++r)
                    rep.sorted_mean[(l * 2 + static_cast<std::size_t>(kind)) * d + r] +=
                        sorted[r] / static_cast<double>(trace.kv_heads());
            }
    return rep;
}

/// Compressed-dim counts per group of `group` consecutive dims, averaged over
/// heads. Index [layer][group]; the last group may be partial.
struct SelectionHistogram {
    std::size_t layers = 0;
    std::size_t groups = 0;
    std::size_t group_size = 16;
    std::vector<double> k_counts;
    std::vector<double> v_counts;

    double k(std::size_t l, std::size_t g) const { return k_counts[l * groups + g]; }
    double v(std::size_t l, std::size_t g) const { return v_counts[l * groups + g]; }
};

inline SelectionHistogram selection_histogram(const CacheLayout& layout, std::size_t group = 16) {
    if (group == 0) throw std::invalid_argument("selection_histogram: group size must be >= 1");
    SelectionHistogram hist;
    hist.layers = layout.layers();
    hist.group_size = group;
    hist.groups = (layout.head_dim() + group - 1) / group;
    hist.k_counts.assign(hist.layers * hist.groups, 0.0);
    hist.v_counts.assign(hist.layers * hist.groups, 0.0);
    const double inv_heads = layout.kv_heads() ? 1.0 / static_cast<double>(layout.kv_heads()) : 0.0;
    for (std::size_t l = 0; l < layout.layers(); ++l)
        for (std::size_t h = 0; h < layout.kv_heads(); ++h) {
            const auto& s = layout.split(l, h);
            for (std::size_t dim : s.k_compressed) hist.k_counts[l * hist.groups + dim / group] += inv_heads;
            for (std::size_t dim : s.v_compressed) hist.v_counts[l * hist.groups + dim / group] += inv_heads;
        }
    return hist;
}

}  // namespace fourier_kv
