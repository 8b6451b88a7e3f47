#pragma once

// A small rotary-position transformer with seeded random weights. It exists to
// produce KV caches whose statistics resemble a real decoder's (post-rotary
// keys, grouped-query heads) at a size that runs in tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fourier_kv/matrix.hpp"
#include "fourier_kv/trace.hpp"

namespace fourier_kv {

struct TinyModelConfig {
    std::size_t layers = 4;
    std::size_t heads = 4;     // query heads
    std::size_t kv_heads = 4;  // must divide heads
    std::size_t head_dim = 64; // must be even (rotary pairs)
    std::size_t vocab = 256;
    std::uint64_t seed = 0;
    std::size_t max_context = 4096;
    double rope_base = 10000.0;
    double embed_scale = 1.0;
    bool normalize = true;  // RMSNorm before attention and MLP
    bool mlp = true;

    std::size_t hidden() const noexcept { return heads * head_dim; }
};

namespace detail {

struct Linear {
    std::size_t in = 0, out = 0;
    MatrixD w;  // out x in

    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng) : in(in_dim), out(out_dim), w(out_dim, in_dim) {
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in_dim)));
        for (double& v : w.flat()) v = normal(rng);
    }

    void apply(std::span<const double> x, std::span<double> y) const {
        for (std::size_t o = 0; o < out; ++o) {
            auto r = w.row(o);
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += r[i] * x[i];
            y[o] = acc;
        }
    }
};

struct TinyLayer {
    Linear wq, wk, wv, wo, w1, w2;
};

inline void rms_norm(std::span<const double> x, std::span<double> y) {
    double ss = 0.0;
    for (double v : x) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv;
}

/// Rotate-half rotary embedding: dims (i, i + d/2) form a pair rotating at
/// base^(-2i/d) radians per position, so low dims rotate fastest.
inline void apply_rotary(std::span<double> v, std::size_t pos, double base) {
    const std::size_t half = v.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(v.size()));
        const double ang = static_cast<double>(pos) * freq;
        const double c = std::cos(ang), s = std::sin(ang);
        const double a = v[i], b = v[i + half];
        v[i] = a * c - b * s;
        v[i + half] = a * s + b * c;
    }
}

}  // namespace detail

/// Runs the model over `tokens` and returns the cached post-rotary K and V of
/// every layer.
inline KVTrace tiny_forward(const TinyModelConfig& cfg, std::span<const std::uint32_t> tokens) {
    if (cfg.layers == 0 || cfg.heads == 0 || cfg.kv_heads == 0 || cfg.head_dim == 0 || cfg.vocab == 0)
        throw std::invalid_argument("tiny_forward: geometry must be non-zero");
    if (cfg.heads % cfg.kv_heads != 0) throw std::invalid_argument("tiny_forward: kv_heads must divide heads");
    if (cfg.head_dim % 2 != 0) throw std::invalid_argument("tiny_forward: head_dim must be even");
    if (tokens.size() > cfg.max_context)
        throw std::invalid_argument("tiny_forward: " + std::to_string(tokens.size()) +
                                    " tokens exceed max_context " + std::to_string(cfg.max_context));
    for (std::uint32_t id : tokens)
        if (id >= cfg.vocab) throw std::out_of_range("tiny_forward: token id " + std::to_string(id) + " out of vocab");

    const std::size_t H = cfg.hidden();
    const std::size_t d = cfg.head_dim;
    const std::size_t kvw = cfg.kv_heads * d;
    const std::size_t group = cfg.heads / cfg.kv_heads;
    const std::size_t L = tokens.size();

    std::mt19937_64 rng(cfg.seed);
    MatrixD embed(cfg.vocab, H);
    {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : embed.flat()) v = normal(rng);
    }
    std::vector<detail::TinyLayer> layers(cfg.layers);
    for (auto& ly : layers) {
        ly.wq = detail::Linear(H, H, rng);
        ly.wk = detail::Linear(H, kvw, rng);
        ly.wv = detail::Linear(H, kvw, rng);
        ly.wo = detail::Linear(H, H, rng);
        ly.w1 = detail::Linear(H, 2 * H, rng);
        ly.w2 = detail::Linear(2 * H, H, rng);
    }

    TraceGeometry g{cfg.layers, cfg.kv_heads, d, L};
    KVTrace trace(g, "tiny:seed=" + std::to_string(cfg.seed));

    MatrixD x(L, H);
    for (std::size_t t = 0; t < L; ++t) {
        auto src = embed.row(tokens[t]);
        auto dst = x.row(t);
        for (std::size_t i = 0; i < H; ++i) dst[i] = cfg.embed_scale * src[i];
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> normed(H), hid(2 * H), tmp(H), scores(L);
    for (std::size_t li = 0; li < cfg.layers; ++li) {
        const auto& ly = layers[li];
        MatrixD q(L, H), k(L, kvw), v(L, kvw);
        for (std::size_t t = 0; t < L; ++t) {
            auto xt = x.row(t);
            if (cfg.normalize) detail::rms_norm(xt, normed);
            else std::copy(xt.begin(), xt.end(), normed.begin());
            ly.wq.apply(normed, q.row(t));
            ly.wk.apply(normed, k.row(t));
            ly.wv.apply(normed, v.row(t));
            for (std::size_t h = 0; h < cfg.heads; ++h) detail::apply_rotary(q.row(t).subspan(h * d, d), t, cfg.rope_base);
            for (std::size_t h = 0; h < cfg.kv_heads; ++h) {
                detail::apply_rotary(k.row(t).subspan(h * d, d), t, cfg.rope_base);
                for (std::size_t i = 0; i < d; ++i) {
                    trace.at(li, CacheKind::Key, h, t, i) = static_cast<float>(k(t, h * d + i));
                    trace.at(li, CacheKind::Value, h, t, i) = static_cast<float>(v(t, h * d + i));
                }
            }
        }
        // causal attention with grouped KV heads
        MatrixD attn(L, H);
        for (std::size_t t = 0; t < L; ++t) {
            for (std::size_t h = 0; h < cfg.heads; ++h) {
                const std::size_t kh = h / group;
                auto qv = q.row(t).subspan(h * d, d);
                double mx = -INFINITY;
                for (std::size_t s = 0; s <= t; ++s) {
                    auto kv = k.row(s).subspan(kh * d, d);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d; ++i) acc += qv[i] * kv[i];
                    scores[s] = acc * scale;
                    mx = std::max(mx, scores[s]);
                }
                double denom = 0.0;
                for (std::size_t s = 0; s <= t; ++s) {
                    scores[s] = std::exp(scores[s] - mx);
                    denom += scores[s];
                }
                auto out = attn.row(t).subspan(h * d, d);
                for (std::size_t s = 0; s <= t; ++s) {
                    const double p = scores[s] / denom;
                    auto vv = v.row(s).subspan(kh * d, d);
                    for (std::size_t i = 0; i < d; ++i) out[i] += p * vv[i];
                }
            }
        }
        for (std::size_t t = 0; t < L; ++t) {
            ly.wo.apply(attn.row(t), tmp);
            auto xt = x.row(t);
            for (std::size_t i = 0; i < H; ++i) xt[i] += tmp[i];
            if (cfg.mlp) {
                if (cfg.normalize) detail::rms_norm(xt, normed);
                else std::copy(xt.begin(), xt.end(), normed.begin());
                ly.w1.apply(normed, hid);
                for (double& h : hid) h = h / (1.0 + std::exp(-h));  // SiLU
                ly.w2.apply(hid, tmp);
                for (std::size_t i = 0; i < H; ++i) xt[i] += tmp[i];
            }
        }
    }
    return trace;
}

/// Seeded uniform token ids, for traces that need no particular text.
inline std::vector<std::uint32_t> random_tokens(std::size_t count, std::size_t vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::uint32_t> dist(0, static_cast<std::uint32_t>(vocab - 1));
    std::vector<std::uint32_t> ids(count);
    for (auto& id : ids) id = dist(rng);
    return ids;
}

}  // namespace fourier_kv
