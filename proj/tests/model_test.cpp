#include "fedeat/model.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"

using namespace fedeat;

namespace {

Vocabulary small_vocab() { return Vocabulary::from_words({"a", "subtle", "chiller", "good", "bad", "movie"}); }

ArchitectureConfig small_arch(std::size_t vocab, std::vector<std::size_t> hidden = {4}) {
    ArchitectureConfig a;
    a.vocab_size = vocab;
    a.embed_dim = 3;
    a.hidden_dims = std::move(hidden);
    a.num_classes = 2;
    a.max_len = 6;
    return a;
}

// Straight-line forward: mean pool, tanh hidden layers, linear head.
std::vector<double> reference_logits(const ModelParams& p, const TokenIds& ids) {
    const auto& arch = p.arch();
    const Tensor& emb = p.get("embedding");
    const std::size_t d = arch.embed_dim;
    std::vector<double> h(d, 0.0);
    double count = 0;
    for (TokenId id : ids) {
        if (id == Vocabulary::pad) continue;
        count += 1;
        for (std::size_t c = 0; c < d; ++c) h[c] += emb[id * d + c];
    }
    if (count > 0)
        for (auto& v : h) v /= count;
    auto dense = [](const std::vector<double>& x, const Tensor& w, const Tensor& b) {
        std::vector<double> y(w.dim(1));
        for (std::size_t j = 0; j < y.size(); ++j) {
            double s = b[j];
            for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i * w.dim(1) + j];
            y[j] = s;
        }
        return y;
    };
    for (std::size_t l = 0; l < arch.hidden_dims.size(); ++l) {
        const std::string n = "hidden" + std::to_string(l);
        h = dense(h, p.get(n + ".weight"), p.get(n + ".bias"));
        for (auto& v : h) v = std::tanh(v);
    }
    return dense(h, p.get("head.weight"), p.get("head.bias"));
}

} // namespace

TEST(Tokenize, LooksUpPadsAndLowercases) {
    Vocabulary v = small_vocab();
    TokenIds ids = tokenize("A Subtle  chiller", v, 6);
    EXPECT_EQ(ids, (TokenIds{v.id("a"), v.id("subtle"), v.id("chiller"), 0, 0, 0}));
    EXPECT_EQ(pad_mask(ids), (PadMask{1, 1, 1, 0, 0, 0}));
}

TEST(Tokenize, UnknownWordMapsToUnk) {
    EXPECT_EQ(tokenize("zzzunknownzzz", small_vocab(), 4), (TokenIds{Vocabulary::unk, 0, 0, 0}));
}

TEST(Tokenize, EmptyStringIsAllPad) { EXPECT_EQ(tokenize("", small_vocab(), 3), (TokenIds{0, 0, 0})); }

TEST(Tokenize, TruncatesToMaxLen) {
    EXPECT_EQ(tokenize("a a a a a", small_vocab(), 2).size(), 2u);
}

TEST(TokenizeProperty, DetokenizeRecoversInVocabMultiset) {
    Vocabulary v = small_vocab();
    const auto words = v.words();
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = rng() % 8;
        std::vector<std::string> picked;
        std::string text;
        for (std::size_t i = 0; i < n; ++i) {
            picked.push_back(words[rng() % words.size()]);
            text += picked.back() + " ";
        }
        auto back = detokenize(tokenize(text, v, 8), v);
        std::sort(picked.begin(), picked.end());
        std::sort(back.begin(), back.end());
        EXPECT_EQ(back, picked);
    }
}

TEST(Vocabulary, SpecialsAndFileRoundTrip) {
    Vocabulary v = small_vocab();
    EXPECT_EQ(v.token(0), "<pad>");
    EXPECT_EQ(v.token(1), "<unk>");
    EXPECT_EQ(v.size(), 8u);
    const auto path = std::filesystem::temp_directory_path() / "fedeat_vocab_test.txt";
    v.save(path.string());
    Vocabulary back = Vocabulary::load(path.string());
    EXPECT_EQ(back.words(), v.words());
    std::filesystem::remove(path);
}

TEST(Embed, RowsAreEmbeddingRows) {
    ModelParams p = init_params(small_arch(8), 3);
    const Tensor& e = p.get("embedding");
    Tensor z = embed_values(p, TokenIds(6, Vocabulary::pad));
    for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z.at(r, c), e.at(0, c));
    TokenIds one{5, 0, 0, 0, 0, 0};
    Tensor z1 = embed_values(p, one);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(z1.at(0, c), e.at(5, c));
}

TEST(Embed, OutOfRangeIdIsAnError) {
    ModelParams p = init_params(small_arch(8), 3);
    TokenIds bad{8, 0, 0, 0, 0, 0};
    EXPECT_THROW(embed_values(p, bad), ShapeError);
    Tape t;
    BoundModel m = bind(t, p, false);
    EXPECT_THROW(embed(m, bad), ShapeError);
}

TEST(Embed, GradientOfSumCountsOccurrences) {
    ModelParams p = init_params(small_arch(8), 3);
    TokenIds ids{2, 5, 2, 0, 0, 7};
    Tape t;
    BoundModel m = bind(t, p, true);
    t.backward(sum(embed(m, ids)));
    Tensor want({8, 3});
    for (TokenId id : ids)
        for (std::size_t c = 0; c < 3; ++c) want.at(id, c) += 1.0;
    EXPECT_EQ(m.embedding->grad(), want);
}

TEST(Forward, ZeroWeightsGiveHeadBias) {
    ModelParams p = ModelParams::zeros(small_arch(8));
    p.get("head.bias") = Tensor::vector({0.25, -0.5});
    EXPECT_EQ(logits(p, TokenIds{2, 3, 0, 0, 0, 0}), Tensor::vector({0.25, -0.5}));
}

TEST(Forward, PermutingNonPadRowsLeavesLogitsUnchanged) {
    ModelParams p = init_params(small_arch(8), 9);
    Tensor a = logits(p, TokenIds{2, 3, 4, 0, 0, 0});
    Tensor b = logits(p, TokenIds{4, 2, 3, 0, 0, 0});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(Forward, MatchesStraightLineReference) {
    for (auto hidden : {std::vector<std::size_t>{}, {4}, {4, 3}}) {
        ModelParams p = init_params(small_arch(8, hidden), 42);
        for (auto& t : p.tensors())
            if (t.name.ends_with(".bias"))
                for (auto& v : t.tensor.data()) v = 0.05;
        TokenIds ids{2, 7, 3, 3, 0, 0};
        Tensor got = logits(p, ids);
        auto want = reference_logits(p, ids);
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
    }
}

TEST(Forward, AllPadPoolsToZeroVector) {
    ModelParams p = init_params(small_arch(8, {}), 42);
    p.get("head.bias") = Tensor::vector({0.1, 0.2});
    EXPECT_EQ(logits(p, TokenIds(6, 0)), Tensor::vector({0.1, 0.2}));
}

TEST(Forward, WrongEmbeddingShapeIsAnError) {
    ModelParams p = init_params(small_arch(8), 1);
    Tape t;
    BoundModel m = bind(t, p, false, false);
    EXPECT_THROW(forward_from_embedding(m, t.constant(Tensor({5, 3})), PadMask(5, 1)), ShapeError);
}

TEST(Forward, EmbedThenForwardEqualsFusedPass) {
    ModelParams p = init_params(small_arch(8), 4);
    TokenIds ids{3, 6, 1, 0, 0, 0};
    Tape t;
    BoundModel m = bind(t, p, false);
    Tensor fused = forward_from_embedding(m, embed(m, ids), pad_mask(ids)).value();
    EXPECT_EQ(fused, logits(p, ids));
}

TEST(Forward, PaddingBeyondMaxLenNeverChangesLogits) {
    Vocabulary v = small_vocab();
    ModelParams p = init_params(small_arch(v.size()), 8);
    TokenIds base = tokenize("good movie", v, 6);
    TokenIds extended = tokenize("good movie a a a a a a a", v, 6);
    EXPECT_NE(logits(p, base), logits(p, extended));  // in-range tokens do matter
    EXPECT_EQ(logits(p, tokenize("a subtle chiller a bad movie", v, 6)),
              logits(p, tokenize("a subtle chiller a bad movie good good", v, 6)));
}

TEST(Loss, UniformLogitsOverFourClasses) {
    ArchitectureConfig a = small_arch(8);
    a.num_classes = 4;
    ModelParams p = ModelParams::zeros(a);
    EXPECT_NEAR(loss_value(p, Tensor({6, 3}), PadMask(6, 1), 2), std::log(4.0), 1e-15);
}

TEST(Loss, SaturatedHeadDrivesLossToZero) {
    ModelParams p = ModelParams::zeros(small_arch(8));
    p.get("head.bias") = Tensor::vector({60.0, -60.0});
    const double l = loss_value(p, Tensor({6, 3}), PadMask(6, 1), 0);
    EXPECT_GE(l, 0.0);
    EXPECT_LT(l, 1e-40);
}

TEST(Loss, LabelOutOfRangeIsAnError) {
    ModelParams p = ModelParams::zeros(small_arch(8));
    EXPECT_THROW(loss_value(p, Tensor({6, 3}), PadMask(6, 1), 2), Error);
}

TEST(Loss, ParameterGradientsMatchFiniteDifferences) {
    ModelParams p = init_params(small_arch(8, {4, 3}), 17);
    TokenIds ids{2, 5, 5, 7, 0, 0};
    Tape t;
    BoundModel m = bind(t, p, true);
    t.backward(loss(m, embed(m, ids), pad_mask(ids), 1));
    ModelParams g = gradients(m, p);
    const auto flat = p.flatten();
    const auto gflat = g.flatten();
    auto f = [&](std::vector<double>& x) {
        ModelParams q = p.unflatten(x);
        Tape u;
        BoundModel mq = bind(u, q, false);
        return loss(mq, embed(mq, ids), pad_mask(ids), 1).value().item();
    };
    for (std::size_t i = 0; i < flat.size(); ++i)
        ASSERT_LT(oracle::rel_err(gflat[i], oracle::central_difference(f, flat, i)), 1e-4) << i;
}

TEST(ModelParams, SchemaNamesAndShapes) {
    auto s = make_schema(small_arch(10, {4, 5}));
    ASSERT_EQ(s.size(), 7u);
    EXPECT_EQ(s[0], (std::pair<std::string, Shape>{"embedding", {10, 3}}));
    EXPECT_EQ(s[3], (std::pair<std::string, Shape>{"hidden1.weight", {4, 5}}));
    EXPECT_EQ(s[6], (std::pair<std::string, Shape>{"head.bias", {2}}));
}

TEST(ModelParams, InitIsSeededUniformWithZeroBiases) {
    ModelParams a = init_params(small_arch(8), 5);
    EXPECT_EQ(a, init_params(small_arch(8), 5));
    EXPECT_NE(a, init_params(small_arch(8), 6));
    for (const auto& t : a.tensors())
        for (double v : t.tensor.data()) {
            if (t.name.ends_with(".bias")) EXPECT_EQ(v, 0.0);
            else EXPECT_TRUE(v >= -0.1 && v < 0.1);
        }
}

TEST(ModelParamsProperty, FlattenUnflattenRoundTrips) {
    ModelParams p = init_params(small_arch(8, {4, 3}), 1);
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 10.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> v(p.parameter_count());
        for (auto& x : v) x = n(rng);
        EXPECT_EQ(p.unflatten(v).flatten(), v);
    }
    EXPECT_THROW(p.unflatten(std::vector<double>(3)), ShapeError);
}

TEST(Checkpoint, RoundTripsExactly) {
    ModelParams p = init_params(small_arch(8, {4, 3}), 99);
    p.get("head.bias") = Tensor::vector({1.0 / 3.0, -2.5e-300});
    ModelParams back = params_from_checkpoint(nlohmann::json::parse(checkpoint_json(p).dump()));
    EXPECT_EQ(back, p);
}

TEST(Checkpoint, SchemaDiffReportsMismatch) {
    auto diff = schema_diff(small_arch(8, {4}), small_arch(9, {4}));
    ASSERT_FALSE(diff.empty());
    EXPECT_NE(diff[0].find("embedding"), std::string::npos);
    EXPECT_TRUE(schema_diff(small_arch(8), small_arch(8)).empty());
}

TEST(Architecture, ViolationsAreListed) {
    ArchitectureConfig a;
    a.vocab_size = 1;
    a.embed_dim = 0;
    a.max_len = 0;
    EXPECT_EQ(a.violations().size(), 3u);
}
