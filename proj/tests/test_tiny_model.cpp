#include "fourier_kv/tiny_model.hpp"

#include <gtest/gtest.h>

using namespace fourier_kv;

TEST(TinyModel, DeterministicPerSeed) {
    TinyModelConfig cfg;
    cfg.layers = 2;
    cfg.head_dim = 16;
    cfg.seed = 7;
    const auto tok = random_tokens(40, cfg.vocab, 7);
    EXPECT_EQ(tiny_forward(cfg, tok), tiny_forward(cfg, tok));
    cfg.seed = 8;
    const auto other = tiny_forward(cfg, tok);
    cfg.seed = 7;
    EXPECT_FALSE(other == tiny_forward(cfg, tok));
}

TEST(TinyModel, GeometryFollowsConfig) {
    TinyModelConfig cfg;
    cfg.layers = 3;
    cfg.heads = 4;
    cfg.kv_heads = 2;
    cfg.head_dim = 8;
    const auto t = tiny_forward(cfg, random_tokens(12, cfg.vocab, 1));
    EXPECT_EQ(t.geometry(), (TraceGeometry{3, 2, 8, 12}));
    EXPECT_TRUE(t.all_finite());
}

TEST(TinyModel, FirstLayerScalesLinearlyWithoutNormalization) {
    TinyModelConfig cfg;
    cfg.layers = 1;
    cfg.head_dim = 8;
    cfg.normalize = false;
    const auto tok = random_tokens(20, cfg.vocab, 3);
    const auto a = tiny_forward(cfg, tok);
    cfg.embed_scale = 2.0;
    const auto b = tiny_forward(cfg, tok);
    for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_FLOAT_EQ(b.data()[i], 2.0f * a.data()[i]);
}

TEST(TinyModel, KeysArePostRotary) {
    // identical tokens give identical values but rotated keys
    TinyModelConfig cfg;
    cfg.layers = 1;
    cfg.head_dim = 8;
    const std::vector<std::uint32_t> tok(5, 11);
    const auto t = tiny_forward(cfg, tok);
    double kdiff = 0, vdiff = 0;
    for (std::size_t d = 0; d < 8; ++d) {
        kdiff += std::abs(t.at(0, CacheKind::Key, 0, 3, d) - t.at(0, CacheKind::Key, 0, 0, d));
        vdiff += std::abs(t.at(0, CacheKind::Value, 0, 3, d) - t.at(0, CacheKind::Value, 0, 0, d));
    }
    EXPECT_GT(kdiff, 1e-3);
    EXPECT_EQ(vdiff, 0.0);
}

TEST(TinyModel, RejectsBadInput) {
    TinyModelConfig cfg;
    cfg.layers = 1;
    cfg.head_dim = 8;
    const std::vector<std::uint32_t> bad{1, 2, 256};
    EXPECT_THROW(tiny_forward(cfg, bad), std::out_of_range);
    cfg.max_context = 2;
    const std::vector<std::uint32_t> longer{1, 2, 3};
    EXPECT_THROW(tiny_forward(cfg, longer), std::invalid_argument);
    cfg.max_context = 10;
    cfg.kv_heads = 3;
    EXPECT_THROW(tiny_forward(cfg, longer), std::invalid_argument);
}
