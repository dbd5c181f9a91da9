#include <gtest/gtest.h>

#include <cmath>

#include "beatformer/transformer.hpp"
#include "support/test_support.hpp"

using namespace beatformer;
namespace bt = beatformer::testing;

namespace {

ModelConfig reduced(HeadKind head, std::size_t d = 8, std::size_t heads = 2) {
    ModelConfig c;
    c.d_model = d;
    c.n_encoders = 1;
    c.n_heads = heads;
    c.dff = 16;
    c.max_pos = 6;
    c.d_class = 3;
    c.dropout_rate = 0.0;
    c.head = head;
    return c;
}

// out = x W + b with W stored [in, out], computed by hand.
std::vector<double> affine(const std::vector<double>& x, const Tensor& w, const Tensor& b) {
    const std::size_t in = w.dim(0), out = w.dim(1);
    std::vector<double> y(out);
    for (std::size_t j = 0; j < out; ++j) {
        double acc = b[j];
        for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i * out + j];
        y[j] = acc;
    }
    return y;
}

AttentionParams random_attention(std::size_t d, std::uint64_t seed) {
    return {bt::random_tensor({d, d}, seed, false), bt::random_tensor({d}, seed + 1, false),
            bt::random_tensor({d, d}, seed + 2, false), bt::random_tensor({d}, seed + 3, false),
            bt::random_tensor({d, d}, seed + 4, false), bt::random_tensor({d}, seed + 5, false),
            bt::random_tensor({d, d}, seed + 6, false), bt::random_tensor({d}, seed + 7, false)};
}

}  // namespace

TEST(Config, Defaults) {
    ModelConfig c;
    EXPECT_EQ(c.d_model, 1000u);
    EXPECT_EQ(c.n_encoders, 5u);
    EXPECT_EQ(c.n_heads, 8u);
    EXPECT_EQ(c.dff, 2048u);
    EXPECT_EQ(c.d_qkv(), 125u);
    EXPECT_EQ(c.max_pos, 50u);
    EXPECT_EQ(c.d_class, 28u);
    EXPECT_DOUBLE_EQ(c.dropout_rate, 0.1);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, Validation) {
    ModelConfig c;
    c.n_heads = 7;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.dff = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.dropout_rate = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, SignatureSeparatesTrunkAndHead) {
    auto a = reduced(HeadKind::Generative);
    auto b = reduced(HeadKind::Classifier);
    EXPECT_EQ(a.trunk_hash(), b.trunk_hash());
    EXPECT_NE(a.hash(), b.hash());
    b.n_heads = 4;
    EXPECT_NE(a.trunk_hash(), b.trunk_hash());
    EXPECT_EQ(parse_head(to_string(HeadKind::Classifier)), HeadKind::Classifier);
}

TEST(PositionalEncoding, ClosedForm) {
    const auto pe = positional_encoding(50, 1000);
    ASSERT_EQ(pe.shape(), (Shape{50, 1000}));
    EXPECT_EQ(pe[0], 0.0);
    EXPECT_EQ(pe[1], 1.0);
    EXPECT_NEAR(pe[1000], 0.841471, 1e-6);
    EXPECT_NEAR(pe[7 * 1000 + 11], std::cos(7.0 / std::pow(10000.0, 10.0 / 1000.0)), 1e-14);
    for (double v : pe.data()) {
        EXPECT_LE(v, 1.0);
        EXPECT_GE(v, -1.0);
    }
}

TEST(Mask, CausalAndPadding) {
    const auto m = AttentionMask::make(5, 3, true);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(m.allowed(i, j), j <= i && j < 3) << i << "," << j;
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(m.allowed(i, i));
    const auto open = AttentionMask::make(4, 2, false);
    EXPECT_TRUE(open.allowed(0, 1));
    EXPECT_FALSE(open.allowed(0, 2));
}

TEST(Attention, SingleKeyReturnsValue) {
    const auto q = bt::random_tensor({2, 1, 3}, 1, false);
    const auto k = bt::random_tensor({2, 1, 3}, 2, false);
    const auto v = bt::random_tensor({2, 1, 3}, 3, false);
    EXPECT_EQ(scaled_dot_attention(q, k, v, AttentionMask::make(1, 1, false)).data(), v.data());
}

TEST(Attention, IdenticalKeysAverageValues) {
    const auto q = bt::random_tensor({1, 3, 2}, 4, false);
    const auto k = Tensor::from({1, 3, 2}, {0.3, -1, 0.3, -1, 0.3, -1});
    const auto v = bt::random_tensor({1, 3, 2}, 5, false);
    const auto out = scaled_dot_attention(q, k, v, AttentionMask::make(3, 3, false));
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_NEAR(out[r * 2 + c], (v[c] + v[2 + c] + v[4 + c]) / 3.0, 1e-14);
        }
    }
}

TEST(Attention, TwoByTwoCausal) {
    const auto q = Tensor::from({1, 2, 2}, {1, 0, 0.5, 2});
    const auto k = Tensor::from({1, 2, 2}, {1, 1, -1, 3});
    const auto v = Tensor::from({1, 2, 2}, {10, 20, -4, 8});
    Tensor weights;
    const auto out = scaled_dot_attention(q, k, v, AttentionMask::make(2, 2, true), &weights);
    EXPECT_EQ(out[0], 10.0);
    EXPECT_EQ(out[1], 20.0);
    // Row 1 scores: q1.k0 = 2.5, q1.k1 = 5.5, scaled by 1/sqrt(2).
    const double s0 = 2.5 / std::sqrt(2.0), s1 = 5.5 / std::sqrt(2.0);
    const double w0 = 1.0 / (1.0 + std::exp(s1 - s0)), w1 = 1.0 - w0;
    EXPECT_NEAR(out[2], w0 * 10 + w1 * -4, 1e-12);
    EXPECT_NEAR(out[3], w0 * 20 + w1 * 8, 1e-12);
    EXPECT_EQ(weights[1], 0.0);
    EXPECT_NEAR(weights[2], w0, 1e-15);
}

TEST(Attention, RowsSumToOneBlockedMassVanishes) {
    const auto q = bt::random_tensor({3, 6, 4}, 6, false, -3, 3);
    const auto k = bt::random_tensor({3, 6, 4}, 7, false, -3, 3);
    const auto v = bt::random_tensor({3, 6, 4}, 8, false);
    const auto mask = AttentionMask::make(6, 4, true);
    Tensor w;
    scaled_dot_attention(q, k, v, mask, &w);
    for (std::size_t h = 0; h < 3; ++h) {
        for (std::size_t i = 0; i < 6; ++i) {
            double allowed = 0, blocked = 0;
            for (std::size_t j = 0; j < 6; ++j) (mask.allowed(i, j) ? allowed : blocked) += w[(h * 6 + i) * 6 + j];
            EXPECT_NEAR(allowed, 1.0, 1e-9);
            EXPECT_LT(blocked, 1e-30);
        }
    }
}

TEST(MultiHead, ZeroInputZeroBiasGivesZero) {
    auto p = random_attention(8, 10);
    for (auto* b : {&p.bq, &p.bk, &p.bv, &p.bo}) *b = Tensor::zeros({8});
    const auto out = multi_head_attention(Tensor::zeros({3, 8}), p, 2, AttentionMask::make(3, 3, true));
    ASSERT_EQ(out.shape(), (Shape{3, 8}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(MultiHead, SinglePositionIsValueThenOutputProjection) {
    const auto p = random_attention(8, 20);
    const auto x = bt::random_tensor({1, 8}, 30, false);
    const auto out = multi_head_attention(x, p, 4, AttentionMask::make(1, 1, true));
    const auto expected = affine(affine(x.data(), p.wv, p.bv), p.wo, p.bo);
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(out[j], expected[j], 1e-13);
}

TEST(EncoderLayer, ShapeDeterminismAndCausality) {
    const TransformerModel model(reduced(HeadKind::Generative), 3);
    auto x = bt::random_tensor({5, 8}, 40, false);
    ForwardContext c1, c2;
    const auto a = model.encode(x, 5, c1);
    const auto b = model.encode(x, 5, c2);
    EXPECT_EQ(a.shape(), (Shape{5, 8}));
    EXPECT_EQ(a.data(), b.data());
    // Perturb position 3; rows 0..2 must not move.
    auto y = x.clone();
    for (std::size_t j = 0; j < 8; ++j) y.data()[3 * 8 + j] += 5.0;
    ForwardContext c3;
    const auto c = model.encode(y, 5, c3);
    for (std::size_t i = 0; i < 3 * 8; ++i) EXPECT_NEAR(c[i], a[i], 1e-12);
    bool changed = false;
    for (std::size_t i = 3 * 8; i < 5 * 8; ++i) changed = changed || c[i] != a[i];
    EXPECT_TRUE(changed);
}

TEST(EncoderLayer, TrainingDropoutDependsOnSeed) {
    auto cfg = reduced(HeadKind::Generative);
    cfg.dropout_rate = 0.3;
    const TransformerModel model(cfg, 3);
    const auto x = bt::random_tensor({4, 8}, 41, false);
    ForwardContext a(true, 5), b(true, 5), c(true, 6);
    const auto ya = model.forward(x, 4, a);
    EXPECT_EQ(ya.data(), model.forward(x, 4, b).data());
    EXPECT_NE(ya.data(), model.forward(x, 4, c).data());
}

TEST(Forward, ClassifierProbabilitiesInOpenInterval) {
    const TransformerModel model(reduced(HeadKind::Classifier), 1);
    const auto out = model.forward(bt::random_tensor({6, 8}, 50, false, -5, 5), 4);
    ASSERT_EQ(out.shape(), (Shape{3}));
    for (double p : out.data()) {
        EXPECT_GT(p, 0.0);
        EXPECT_LT(p, 1.0);
    }
}

TEST(Forward, GenerativeShapeFullConfig) {
    ModelConfig cfg;
    cfg.n_encoders = 1;
    cfg.dff = 16;
    const TransformerModel model(cfg, 1);
    const auto out = model.forward(Tensor::zeros({50, 1000}), 7);
    EXPECT_EQ(out.shape(), (Shape{50, 1000}));
}

TEST(Forward, ContractErrors) {
    const TransformerModel model(reduced(HeadKind::Classifier), 1);
    EXPECT_THROW(model.forward(Tensor::zeros({3, 8}), 0), std::invalid_argument);
    EXPECT_THROW(model.forward(Tensor::zeros({7, 8}), 3), std::invalid_argument);
    EXPECT_THROW(model.forward(Tensor::zeros({3, 5}), 3), ShapeError);
}

TEST(Forward, PaddingExtensionLeavesClassifierUnchanged) {
    const TransformerModel model(reduced(HeadKind::Classifier), 2);
    const auto real = bt::random_tensor({3, 8}, 60, false);
    const auto base = model.forward(real, 3);
    auto longer = Tensor::zeros({6, 8});
    std::copy(real.data().begin(), real.data().end(), longer.data().begin());
    const auto ext = model.forward(longer, 3);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(ext[c], base[c], 1e-12);
}

TEST(Forward, PaddingContentIsInvisible) {
    for (bool causal : {true, false}) {
        auto cfg = reduced(HeadKind::Classifier);
        cfg.causal = causal;
        const TransformerModel model(cfg, 2);
        auto x = bt::random_tensor({6, 8}, 61, false);
        for (std::size_t i = 4 * 8; i < 6 * 8; ++i) x.data()[i] = 0.0;
        const auto base = model.forward(x, 4);
        auto noisy = x.clone();
        const auto noise = bt::random_vector(16, 62, -50, 50);
        std::copy(noise.begin(), noise.end(), noisy.data().begin() + 4 * 8);
        const auto out = model.forward(noisy, 4);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out[c], base[c], 1e-12);
    }
}

TEST(ParameterCount, FullGenerativeConfig) {
    // Per encoder: four d x d projections with biases, the two FFN layers
    // and two layer norms; then the d x d generative head.
    const std::size_t d = 1000, dff = 2048;
    const std::size_t per_encoder = 4 * (d * d + d) + (d * dff + dff) + (dff * d + d) + 2 * (2 * d);
    EXPECT_EQ(per_encoder, 8107048u);
    EXPECT_EQ(count_parameters(ModelConfig{}), 5 * per_encoder + d * d + d);
    EXPECT_EQ(count_parameters(ModelConfig{}), 41536240u);
}

TEST(ParameterCount, ClassifierHead) {
    ModelConfig c;
    c.head = HeadKind::Classifier;
    EXPECT_EQ(count_parameters(c), 41536240u - 1001000u + 28028u);
}

TEST(ParameterCount, ReducedHandTally) {
    ModelConfig c;
    c.d_model = 4;
    c.n_encoders = 1;
    c.n_heads = 1;
    c.dff = 8;
    c.d_class = 2;
    // attn 4*(16+4)=80, ffn (32+8)+(32+4)=76, norms 2*(4+4)=16 -> 172.
    EXPECT_EQ(count_parameters(c), 172u + 20u);
    c.head = HeadKind::Classifier;
    EXPECT_EQ(count_parameters(c), 172u + 10u);
    const TransformerModel model(c, 0);
    EXPECT_EQ(model.parameter_count(), 182u);
}

TEST(Registry, UniqueNamesAndInitialisation) {
    const TransformerModel model(reduced(HeadKind::Generative), 9);
    std::set<std::string> names;
    for (const auto& p : model.parameters()) {
        EXPECT_TRUE(names.insert(p.name).second) << p.name;
        EXPECT_TRUE(p.tensor.requires_grad());
        if (p.name.ends_with("gamma")) {
            for (double v : p.tensor.data()) EXPECT_EQ(v, 1.0);
        } else if (p.tensor.rank() == 1) {
            for (double v : p.tensor.data()) EXPECT_EQ(v, 0.0);
        } else {
            const double limit = std::sqrt(6.0 / static_cast<double>(p.tensor.dim(0) + p.tensor.dim(1)));
            for (double v : p.tensor.data()) EXPECT_LE(std::abs(v), limit);
        }
    }
    EXPECT_TRUE(names.count("enc.0.attn.wq"));
    EXPECT_TRUE(names.count("head.w"));
    const TransformerModel again(reduced(HeadKind::Generative), 9);
    EXPECT_EQ(model.parameters()[0].tensor.data(), again.parameters()[0].tensor.data());
}

TEST(Registry, ReplaceHeadAndFreeze) {
    TransformerModel model(reduced(HeadKind::Generative), 9);
    const auto wq = model.parameter("enc.0.attn.wq").tensor.data();
    model.replace_head(HeadKind::Classifier, 4);
    EXPECT_EQ(model.config().head, HeadKind::Classifier);
    EXPECT_EQ(model.parameter("head.w").tensor.shape(), (Shape{8, 3}));
    EXPECT_EQ(model.parameter("enc.0.attn.wq").tensor.data(), wq);
    model.set_trunk_trainable(false);
    for (const auto& p : model.parameters()) EXPECT_EQ(p.trainable, p.name.starts_with("head."));
}

TEST(GradCheck, ReducedModelBothHeads) {
    for (auto head : {HeadKind::Generative, HeadKind::Classifier}) {
        TransformerModel model(reduced(head), 11);
        auto tokens = bt::random_tensor({3, 8}, 70);
        std::vector<Tensor> inputs{tokens};
        for (auto& p : model.parameters()) inputs.push_back(p.tensor);
        const auto loss = [&] {
            const auto out = model.forward(tokens, 3);
            return head == HeadKind::Generative ? bt::weighted_sum(out) : bce_loss(out, {1, 0, 1});
        };
        const auto r = bt::check_gradients(loss, inputs);
        EXPECT_LT(r.max_rel_error, 1e-4) << to_string(head);
        EXPECT_EQ(r.checked, 24 + model.parameter_count());
    }
}

TEST(GradCheck, ReducedModelWithPaddingAndDropout) {
    auto cfg = reduced(HeadKind::Classifier);
    cfg.dropout_rate = 0.2;
    TransformerModel model(cfg, 12);
    auto tokens = bt::random_tensor({4, 8}, 71);
    std::vector<Tensor> inputs;
    for (auto& p : model.parameters()) inputs.push_back(p.tensor);
    const auto r = bt::check_gradients(
        [&] {
            ForwardContext ctx(true, 77);
            return bce_loss(model.forward(tokens, 3, ctx), {0, 1, 1});
        },
        inputs);
    EXPECT_LT(r.max_rel_error, 1e-4);
}
