#pragma once

// Partitioned KV cache. Per (layer, kv-head) the sequence splits into
//   [ initial L_init | middle ... | local L_local ]
// Initial and local tokens are stored exactly. Middle tokens keep their
// uncompressed dims exactly and fold their compressed dims into fixed-size
// spectral states.

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/matrix.hpp"
#include "fourier_kv/spectral.hpp"
#include "fourier_kv/trace.hpp"

namespace fourier_kv {

using DimList = std::vector<std::size_t>;

/// Complement of a sorted compressed-dim list within [0, head_dim).
inline DimList complement_dims(const DimList& compressed, std::size_t head_dim) {
    DimList kept;
    kept.reserve(head_dim - compressed.size());
    std::size_t j = 0;
    for (std::size_t d = 0; d < head_dim; ++d) {
        if (j < compressed.size() && compressed[j] == d) ++j;
        else kept.push_back(d);
    }
    return kept;
}

struct HeadSplit {
    DimList k_compressed;
    DimList v_compressed;
    bool operator==(const HeadSplit&) const = default;
};

struct PartitionConfig {
    std::size_t l_init = 4;
    std::size_t l_local = 1024;
    std::size_t window = 32768;  // Fourier period T
    std::size_t states = 512;    // k
    bool operator==(const PartitionConfig&) const = default;
};

class CacheLayout {
public:
    CacheLayout() = default;
    CacheLayout(PartitionConfig part, std::size_t layers, std::size_t kv_heads, std::size_t head_dim)
        : part_(part), layers_(layers), kv_heads_(kv_heads), head_dim_(head_dim),
          splits_(layers * kv_heads) {
        if (part.l_local < 1) throw std::invalid_argument("CacheLayout: L_local must be >= 1");
        if (part.states < 1) throw std::invalid_argument("CacheLayout: k must be >= 1");
        if (part.window < 1) throw std::invalid_argument("CacheLayout: T must be >= 1");
    }

    const PartitionConfig& partition() const noexcept { return part_; }
    std::size_t layers() const noexcept { return layers_; }
    std::size_t kv_heads() const noexcept { return kv_heads_; }
    std::size_t head_dim() const noexcept { return head_dim_; }

    const HeadSplit& split(std::size_t layer, std::size_t head) const { return splits_.at(layer * kv_heads_ + head); }

    void set_split(std::size_t layer, std::size_t head, HeadSplit s) {
        normalize(s.k_compressed, "K");
        normalize(s.v_compressed, "V");
        splits_.at(layer * kv_heads_ + head) = std::move(s);
    }

    bool matches(const TraceGeometry& g) const noexcept {
        return g.layers == layers_ && g.kv_heads == kv_heads_ && g.head_dim == head_dim_;
    }

    bool operator==(const CacheLayout&) const = default;

private:
    void normalize(DimList& dims, const char* which) const {
        std::sort(dims.begin(), dims.end());
        if (std::adjacent_find(dims.begin(), dims.end()) != dims.end())
            throw std::invalid_argument(std::string("CacheLayout: duplicate ") + which + " dim");
        if (!dims.empty() && dims.back() >= head_dim_)
            throw std::invalid_argument(std::string("CacheLayout: ") + which + " dim out of range");
    }

    PartitionConfig part_;
    std::size_t layers_ = 0;
    std::size_t kv_heads_ = 0;
    std::size_t head_dim_ = 0;
    std::vector<HeadSplit> splits_;
};

/// Most recent tokens, oldest evicted first. Rows carry their absolute positions.
class LocalRing {
public:
    LocalRing() = default;
    LocalRing(std::size_t capacity, std::size_t dim)
        : capacity_(capacity), k_(capacity, dim), v_(capacity, dim), pos_(capacity, 0) {}

    std::size_t size() const noexcept { return count_; }
    std::size_t capacity() const noexcept { return capacity_; }
    bool full() const noexcept { return count_ == capacity_; }

    /// i = 0 is the oldest entry.
    std::span<const float> key(std::size_t i) const { return k_.row(slot(i)); }
    std::span<const float> value(std::size_t i) const { return v_.row(slot(i)); }
    Position position(std::size_t i) const { return pos_[slot(i)]; }

    void push(std::span<const float> k, std::span<const float> v, Position p) {
        if (full()) throw std::logic_error("LocalRing::push on full ring");
        const std::size_t s = slot(count_);
        std::copy(k.begin(), k.end(), k_.row(s).begin());
        std::copy(v.begin(), v.end(), v_.row(s).begin());
        pos_[s] = p;
        ++count_;
    }

    void pop_oldest() {
        if (count_ == 0) throw std::logic_error("LocalRing::pop_oldest on empty ring");
        head_ = (head_ + 1) % capacity_;
        --count_;
    }

private:
    std::size_t slot(std::size_t i) const noexcept { return (head_ + i) % capacity_; }

    std::size_t capacity_ = 0;
    std::size_t head_ = 0;
    std::size_t count_ = 0;
    MatrixF k_, v_;
    std::vector<Position> pos_;
};

/// Compressed cache of one (layer, kv-head).
class HeadCache {
public:
    HeadCache(const CacheLayout& layout, std::size_t layer, std::size_t head)
        : part_(layout.partition()), head_dim_(layout.head_dim()),
          kc_(layout.split(layer, head).k_compressed), vc_(layout.split(layer, head).v_compressed),
          ku_(complement_dims(kc_, head_dim_)), vu_(complement_dims(vc_, head_dim_)),
          init_k_(0, head_dim_), init_v_(0, head_dim_), ring_(part_.l_local, head_dim_),
          middle_k_kept_(0, ku_.size()), middle_v_kept_(0, vu_.size()),
          k_state_(2 * part_.states, kc_.size()), v_state_(2 * part_.states, vc_.size()) {
        k_state_.first_pos = v_state_.first_pos = static_cast<Position>(part_.l_init);
    }

    const PartitionConfig& partition() const noexcept { return part_; }
    std::size_t head_dim() const noexcept { return head_dim_; }
    const DimList& k_compressed() const noexcept { return kc_; }
    const DimList& v_compressed() const noexcept { return vc_; }
    const DimList& k_kept() const noexcept { return ku_; }
    const DimList& v_kept() const noexcept { return vu_; }

    const MatrixF& initial_keys() const noexcept { return init_k_; }
    const MatrixF& initial_values() const noexcept { return init_v_; }
    const LocalRing& local() const noexcept { return ring_; }
    const MatrixF& middle_keys_kept() const noexcept { return middle_k_kept_; }
    const MatrixF& middle_values_kept() const noexcept { return middle_v_kept_; }
    const SpectralState& key_state() const noexcept { return k_state_; }
    const SpectralState& value_state() const noexcept { return v_state_; }

    std::size_t length() const noexcept { return length_; }
    std::size_t middle_count() const noexcept { return k_state_.token_count; }
    Position middle_first() const noexcept { return static_cast<Position>(init_k_.rows()); }

    std::size_t represented_positions() const noexcept {
        return init_k_.rows() + middle_count() + ring_.size();
    }

    /// Floats held by this slice: exact storage plus fixed spectral states.
    std::size_t exact_floats() const noexcept {
        return 2 * (init_k_.rows() + ring_.size()) * head_dim_ + middle_k_kept_.size() + middle_v_kept_.size();
    }
    std::size_t spectral_floats() const noexcept { return k_state_.coeffs.size() + v_state_.coeffs.size(); }

    /// Ingests one token at absolute position length().
    void append(std::span<const float> k, std::span<const float> v, const FourierBasis& basis) {
        if (k.size() != head_dim_ || v.size() != head_dim_)
            throw std::invalid_argument("HeadCache::append: vector width != head_dim");
        const auto pos = static_cast<Position>(length_);
        if (init_k_.rows() < part_.l_init) {
            init_k_.push_row(k);
            init_v_.push_row(v);
        } else {
            if (ring_.full()) evict_oldest(basis);
            ring_.push(k, v, pos);
        }
        ++length_;
    }

    /// Moves positions [first, first+count) of `keys`/`values` straight into
    /// the middle region (batch form of eviction). Only valid while the ring
    /// is empty and the middle continues contiguously.
    void fold_middle_block(const MatrixF& keys, const MatrixF& values, std::size_t first, std::size_t count,
                           const FourierBasis& basis) {
        if (ring_.size() != 0) throw std::logic_error("fold_middle_block: ring must be empty");
        if (static_cast<Position>(first) != middle_first() + static_cast<Position>(middle_count()))
            throw std::logic_error("fold_middle_block: non-contiguous middle block");
        if (count == 0) return;
        MatrixF kc(count, kc_.size()), vc(count, vc_.size());
        middle_k_kept_.reserve_rows(middle_k_kept_.rows() + count);
        middle_v_kept_.reserve_rows(middle_v_kept_.rows() + count);
        std::vector<float> kk(ku_.size()), vk(vu_.size());
        for (std::size_t i = 0; i < count; ++i) {
            auto kr = keys.row(first + i);
            auto vr = values.row(first + i);
            gather(kr, kc_, kc.row(i));
            gather(vr, vc_, vc.row(i));
            gather(kr, ku_, kk);
            gather(vr, vu_, vk);
            middle_k_kept_.push_row(kk);
            middle_v_kept_.push_row(vk);
        }
        const auto start = static_cast<Position>(first);
        if (k_state_.empty()) {
            k_state_ = compress_batch(basis, kc, start);
            v_state_ = compress_batch(basis, vc, start);
        } else {
            // continuing fold keeps the ascending summation order
            for (std::size_t i = 0; i < count; ++i) {
                fold_token(k_state_, basis, kc.row(i), start + static_cast<Position>(i));
                fold_token(v_state_, basis, vc.row(i), start + static_cast<Position>(i));
            }
        }
        length_ += count;
    }

private:
    static void gather(std::span<const float> src, const DimList& dims, std::span<float> dst) {
        for (std::size_t i = 0; i < dims.size(); ++i) dst[i] = src[dims[i]];
    }

    void evict_oldest(const FourierBasis& basis) {
        const Position p = ring_.position(0);
        auto k = ring_.key(0);
        auto v = ring_.value(0);
        std::vector<float> kk(ku_.size()), vk(vu_.size()), kc(kc_.size()), vc(vc_.size());
        gather(k, ku_, kk);
        gather(v, vu_, vk);
        gather(k, kc_, kc);
        gather(v, vc_, vc);
        middle_k_kept_.push_row(kk);
        middle_v_kept_.push_row(vk);
        fold_token(k_state_, basis, kc, p);
        fold_token(v_state_, basis, vc, p);
        ring_.pop_oldest();
    }

    PartitionConfig part_;
    std::size_t head_dim_;
    DimList kc_, vc_, ku_, vu_;
    MatrixF init_k_, init_v_;
    LocalRing ring_;
    MatrixF middle_k_kept_, middle_v_kept_;
    SpectralState k_state_, v_state_;
    std::size_t length_ = 0;
};

/// Builds the compressed slice from the first `seq_len` positions of one head.
/// Initial and local blocks are copied, middle tokens are split and folded as a
/// batch at absolute positions L_init .. seq_len - L_local - 1.
inline HeadCache prefill(const MatrixF& keys, const MatrixF& values, const CacheLayout& layout, std::size_t layer,
                         std::size_t head, const FourierBasis& basis) {
    if (keys.cols() != layout.head_dim() || values.cols() != layout.head_dim())
        throw std::invalid_argument("prefill: head_dim mismatch between trace and layout");
    if (keys.rows() != values.rows()) throw std::invalid_argument("prefill: K and V lengths differ");
    if (basis.states() != layout.partition().states || basis.window() != layout.partition().window)
        throw std::invalid_argument("prefill: basis does not match layout k/T");
    const auto& part = layout.partition();
    const std::size_t n = keys.rows();
    const std::size_t init_n = std::min(n, part.l_init);
    const std::size_t rest = n - init_n;
    const std::size_t local_n = std::min(rest, part.l_local);
    const std::size_t middle_n = rest - local_n;

    HeadCache cache(layout, layer, head);
    for (std::size_t t = 0; t < init_n; ++t) cache.append(keys.row(t), values.row(t), basis);
    cache.fold_middle_block(keys, values, init_n, middle_n, basis);
    for (std::size_t t = init_n + middle_n; t < n; ++t) cache.append(keys.row(t), values.row(t), basis);
    return cache;
}

inline HeadCache prefill(const KVTrace& trace, std::size_t seq_len, const CacheLayout& layout, std::size_t layer,
                         std::size_t head, const FourierBasis& basis) {
    if (!layout.matches(trace.geometry())) throw std::invalid_argument("prefill: layout geometry != trace geometry");
    if (seq_len > trace.seq_len()) throw std::out_of_range("prefill: seq_len beyond trace");
    return prefill(trace.head_matrix(layer, CacheKind::Key, head, 0, seq_len),
                   trace.head_matrix(layer, CacheKind::Value, head, 0, seq_len), layout, layer, head, basis);
}

inline void append_token(HeadCache& cache, const FourierBasis& basis, std::span<const float> k,
                         std::span<const float> v) {
    cache.append(k, v, basis);
}

struct MemoryReport {
    std::size_t exact_floats = 0;
    std::size_t spectral_floats = 0;
    std::size_t full_cache_floats = 0;
    double compressed_fraction = 0.0;  // spectral channels / all channels
    double ratio_vs_full = 0.0;        // stored / dense
};

inline MemoryReport memory_report(const CacheLayout& layout, std::size_t seq_len) {
    const auto& part = layout.partition();
    const std::size_t d = layout.head_dim();
    const std::size_t exact_n = std::min(seq_len, part.l_init + part.l_local);
    const std::size_t middle_n = seq_len - exact_n;
    MemoryReport r;
    std::size_t compressed_channels = 0;
    for (std::size_t l = 0; l < layout.layers(); ++l)
        for (std::size_t h = 0; h < layout.kv_heads(); ++h) {
            const auto& s = layout.split(l, h);
            const std::size_t c = s.k_compressed.size() + s.v_compressed.size();
            compressed_channels += c;
            r.exact_floats += 2 * exact_n * d + middle_n * (2 * d - c);
            r.spectral_floats += 2 * part.states * c;
            r.full_cache_floats += 2 * seq_len * d;
        }
    const std::size_t channels = layout.layers() * layout.kv_heads() * 2 * d;
    r.compressed_fraction = channels ? static_cast<double>(compressed_channels) / static_cast<double>(channels) : 0.0;
    r.ratio_vs_full = r.full_cache_floats
                          ? static_cast<double>(r.exact_floats + r.spectral_floats) / static_cast<double>(r.full_cache_floats)
                          : 1.0;
    return r;
}

}  // namespace fourier_kv
