#include <gtest/gtest.h>

#include <cmath>

#include "beatformer/tensor.hpp"
#include "support/test_support.hpp"

using namespace beatformer;
namespace bt = beatformer::testing;

namespace {

constexpr double kGradTol = 1e-4;

void expect_close(const std::vector<double>& got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(TensorBasics, ShapesAndFactories) {
    const auto z = Tensor::zeros({2, 3});
    EXPECT_EQ(z.numel(), 6u);
    EXPECT_EQ(z.dim(-1), 3u);
    EXPECT_EQ(shape_str(z.shape()), "[2, 3]");
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
    EXPECT_THROW(z.item(), ShapeError);
}

TEST(TensorBasics, CloneIsDeepCopyAliasIsShallow) {
    auto a = Tensor::from({2}, {1, 2});
    auto alias = a;
    auto copy = a.clone();
    a.data()[0] = 9;
    EXPECT_EQ(alias[0], 9.0);
    EXPECT_EQ(copy[0], 1.0);
}

TEST(Matmul, IdentityAndHandProduct) {
    const auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const auto m = Tensor::from({2, 2}, {3.5, -1, 2, 7});
    EXPECT_EQ(matmul(eye, m).data(), m.data());
    const auto c = matmul(Tensor::from({2, 2}, {1, 2, 3, 4}), Tensor::from({2, 1}, {5, 6}));
    EXPECT_EQ(c.shape(), (Shape{2, 1}));
    EXPECT_EQ(c.data(), (std::vector<double>{17, 39}));
}

TEST(Matmul, ShapeMismatchThrows) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5})), ShapeError);
    EXPECT_THROW(matmul(Tensor::zeros({2, 2, 3}), Tensor::zeros({3, 3, 4})), ShapeError);
    EXPECT_THROW(matmul(Tensor::zeros({3}), Tensor::zeros({3, 1})), ShapeError);
}

TEST(Matmul, BatchedMatchesPerSliceProduct) {
    const auto a = bt::random_tensor({3, 2, 4}, 1, false);
    const auto b = bt::random_tensor({3, 4, 5}, 2, false);
    const auto c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 5; ++j) {
                double acc = 0;
                for (std::size_t k = 0; k < 4; ++k) acc += a[s * 8 + i * 4 + k] * b[s * 20 + k * 5 + j];
                EXPECT_NEAR(c[s * 10 + i * 5 + j], acc, 1e-14);
            }
        }
    }
}

TEST(Softmax, Examples) {
    expect_close(softmax(Tensor::from({2}, {0, 0})).data(), {0.5, 0.5}, 1e-15);
    const auto big = softmax(Tensor::from({2}, {1000, 0})).data();
    EXPECT_EQ(big[0], 1.0);
    EXPECT_GE(big[1], 0.0);
    EXPECT_LT(big[1], 1e-300);
    expect_close(softmax(Tensor::from({3}, {0, std::log(2.0), std::log(3.0)})).data(), {1.0 / 6, 2.0 / 6, 3.0 / 6},
                 1e-15);
}

TEST(Softmax, RowsSumToOneAndArePositive) {
    const auto x = bt::random_tensor({7, 11}, 5, false, -30, 30);
    const auto y = softmax(x);
    for (std::size_t r = 0; r < 7; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 11; ++c) {
            EXPECT_GT(y[r * 11 + c], 0.0);
            s += y[r * 11 + c];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(LayerNorm, Examples) {
    const auto ones = Tensor::full({3}, 1.0);
    const auto zeros = Tensor::zeros({3});
    expect_close(layer_norm(Tensor::from({3}, {1, 1, 1}), ones, zeros).data(), {0, 0, 0}, 0);
    const auto y = layer_norm(Tensor::from({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
    expect_close(y.data(), {-1, 1}, 1e-6);
    expect_close(layer_norm(bt::random_tensor({4, 3}, 3, false), Tensor::zeros({3}), Tensor::full({3}, 7.0)).data(),
                 std::vector<double>(12, 7.0), 0);
    EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({2})), ShapeError);
}

TEST(Dropout, IdentityCases) {
    const auto x = bt::random_tensor({100}, 1, false);
    EXPECT_EQ(dropout(x, 0.5, false, CounterRng(1)).data(), x.data());
    EXPECT_EQ(dropout(x, 0.0, true, CounterRng(1)).data(), x.data());
}

TEST(Dropout, LawOfLargeNumbers) {
    const auto y = dropout(Tensor::full({1000000}, 1.0), 0.1, true, CounterRng(2024));
    double total = 0;
    std::size_t zeros = 0;
    for (double v : y.data()) {
        total += v;
        zeros += v == 0.0;
        if (v != 0.0) ASSERT_DOUBLE_EQ(v, 1.0 / 0.9);
    }
    EXPECT_NEAR(total / 1e6, 1.0, 0.01);
    EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.1, 0.01);
}

TEST(Dropout, ReproducibleFromSeed) {
    const auto x = Tensor::full({5000}, 1.0);
    EXPECT_EQ(dropout(x, 0.3, true, CounterRng(7)).data(), dropout(x, 0.3, true, CounterRng(7)).data());
    EXPECT_NE(dropout(x, 0.3, true, CounterRng(7)).data(), dropout(x, 0.3, true, CounterRng(8)).data());
}

TEST(Backward, LinearAndQuadratic) {
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    backward(sum(x));
    EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
    x.zero_grad();
    backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, FanOutAccumulates) {
    auto x = Tensor::from({2}, {1.5, -2}, true);
    // Two paths: 3x and x*x; d/dx = 3 + 2x.
    const auto loss = sum(add(scale(x, 3.0), mul(x, x)));
    backward(loss);
    EXPECT_EQ(x.grad(), (std::vector<double>{3 + 3.0, 3 - 4.0}));
}

TEST(Backward, LeafGradsAccumulateAcrossCalls) {
    auto x = Tensor::from({2}, {1, 1}, true);
    backward(sum(x));
    backward(sum(x));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 2}));
}

TEST(Backward, ConstantsGetNoGradient) {
    auto x = Tensor::from({2}, {1, 2}, true);
    auto c = Tensor::from({2}, {3, 4});
    backward(sum(mul(x, c)));
    EXPECT_EQ(x.grad(), (std::vector<double>{3, 4}));
    EXPECT_FALSE(c.has_grad());
}

TEST(Backward, RejectsNonScalarAndDetached) {
    auto x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(backward(mul(x, x)), std::invalid_argument);
    EXPECT_THROW(backward(Tensor::scalar(1.0)), std::invalid_argument);
}

TEST(Losses, MseExamples) {
    const auto t = bt::random_tensor({3, 4}, 1, false);
    EXPECT_EQ(mse_loss(t, t, {true, true, true}).item(), 0.0);
    auto pred = t.clone();
    for (std::size_t j = 0; j < 4; ++j) pred.data()[4 + j] += 2.0;
    EXPECT_DOUBLE_EQ(mse_loss(pred, t, {false, true, false}).item(), 4.0);
    // A masked row with a huge error contributes nothing.
    for (std::size_t j = 0; j < 4; ++j) pred.data()[j] += 1e6;
    EXPECT_DOUBLE_EQ(mse_loss(pred, t, {false, true, false}).item(), 4.0);
    EXPECT_THROW(mse_loss(pred, t, {false, false, false}), std::invalid_argument);
    EXPECT_THROW(mse_loss(pred, Tensor::zeros({3, 5}), {true, true, true}), ShapeError);
}

TEST(Losses, BceExamples) {
    EXPECT_NEAR(bce_loss(Tensor::full({28}, 0.5), std::vector<double>(28, 1.0)).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce_loss(Tensor::from({2}, {0.9, 0.1}), {1, 0}).item(), 0.105361, 1e-6);
    const double at_clamp = bce_loss(Tensor::from({2}, {1.0, 0.0}), {1, 0}).item();
    EXPECT_NEAR(at_clamp, -std::log(1.0 - 1e-7), 1e-15);
    EXPECT_TRUE(std::isfinite(bce_loss(Tensor::from({2}, {0.0, 1.0}), {1, 0}).item()));
}

TEST(Losses, BceMinimizedAtLabels) {
    // Gradient sign on both sides of the label: pushes toward it.
    for (double y : {0.0, 1.0}) {
        for (double p : {0.2, 0.5, 0.8}) {
            auto probs = Tensor::from({1}, {p}, true);
            backward(bce_loss(probs, {y}));
            if (y == 1.0) EXPECT_LT(probs.grad()[0], 0.0);
            else EXPECT_GT(probs.grad()[0], 0.0);
        }
    }
    // Soft label: the zero of the gradient is at p = y.
    for (double p : {0.25, 0.35}) {
        auto probs = Tensor::from({1}, {p}, true);
        backward(bce_loss(probs, {0.3}));
        EXPECT_EQ(probs.grad()[0] > 0.0, p > 0.3);
    }
}

TEST(Xavier, BoundsAndVariance) {
    const auto w = xavier_uniform(1000, 1000, CounterRng(3));
    const double limit = std::sqrt(6.0 / 2000.0);
    EXPECT_NEAR(limit, 0.05477, 1e-5);
    double mean = 0, sq = 0;
    for (double v : w.data()) {
        ASSERT_LE(std::abs(v), limit);
        mean += v;
        sq += v * v;
    }
    mean /= 1e6;
    const double var = sq / 1e6 - mean * mean;
    EXPECT_NEAR(var, limit * limit / 3.0, 0.05 * limit * limit / 3.0);
    const auto small = xavier_uniform(2, 4, CounterRng(1));
    for (double v : small.data()) EXPECT_LE(std::abs(v), 1.0);
    EXPECT_EQ(xavier_uniform(5, 6, CounterRng(9)).data(), xavier_uniform(5, 6, CounterRng(9)).data());
}

TEST(ShapeOps, ReshapeAndPermute) {
    const auto x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
    EXPECT_EQ(permute(x, {1, 0}).data(), (std::vector<double>{0, 3, 1, 4, 2, 5}));
    EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
    EXPECT_THROW(reshape(x, {4, 2}), ShapeError);
    EXPECT_THROW(permute(x, {0, 0}), ShapeError);
}

TEST(MaskedFill, BlocksSelectedEntries) {
    const auto x = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    const auto y = masked_fill(x, {0, 1, 0, 0}, -9);
    EXPECT_EQ(y.data(), (std::vector<double>{1, -9, 3, 4, 5, -9, 7, 8}));
}

TEST(MaskedFill, AllowedMatchesOnlyMaskedPositions) {
    const auto x = bt::random_tensor({3, 3}, 4, false);
    const std::vector<std::uint8_t> blocked = {0, 1, 1, 0, 0, 1, 0, 0, 0};
    const auto y = masked_fill(x, blocked, -1e9);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], blocked[i] ? -1e9 : x[i]);
}

// Finite-difference checks; every op in 64-bit with seeded random inputs.

TEST(GradCheck, Matmul) {
    auto a = bt::random_tensor({3, 4}, 1);
    auto b = bt::random_tensor({4, 2}, 2);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(matmul(a, b)); }, {a, b});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, BatchedMatmulBothBroadcasts) {
    auto a = bt::random_tensor({2, 3, 4}, 3);
    auto w = bt::random_tensor({4, 2}, 4);
    auto c = bt::random_tensor({3, 2}, 5);
    auto d = bt::random_tensor({2, 2, 5}, 6);
    const auto r = bt::check_gradients(
        [&] { return add(bt::weighted_sum(matmul(a, w)), bt::weighted_sum(matmul(c, d), 7)); }, {a, w, c, d});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, ElementwiseAndBroadcastAdd) {
    auto x = bt::random_tensor({3, 4}, 8);
    auto y = bt::random_tensor({3, 4}, 9);
    auto bias = bt::random_tensor({4}, 10);
    const auto r = bt::check_gradients(
        [&] { return bt::weighted_sum(scale(sub(mul(add(x, bias), y), x), 1.7)); }, {x, y, bias});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, Relu) {
    // Keep inputs away from the kink.
    auto x = Tensor::from({6}, {-0.9, -0.3, 0.2, 0.5, 1.1, -1.4}, true);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(relu(x)); }, {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, Sigmoid) {
    auto x = bt::random_tensor({5}, 11, true, -4, 4);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(sigmoid(x)); }, {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, Softmax) {
    auto x = bt::random_tensor({3, 5}, 12, true, -3, 3);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(softmax(x)); }, {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, LayerNorm) {
    auto x = bt::random_tensor({4, 6}, 13);
    auto g = bt::random_tensor({6}, 14, true, 0.5, 1.5);
    auto b = bt::random_tensor({6}, 15);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(layer_norm(x, g, b)); }, {x, g, b});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, ReshapePermuteMaskedFill) {
    auto x = bt::random_tensor({2, 3, 4}, 16);
    const std::vector<std::uint8_t> blocked = {0, 1, 0, 1, 1, 0, 0, 0, 0};
    const auto r = bt::check_gradients(
        [&] {
            auto p = permute(x, {0, 2, 1});        // [2, 4, 3]
            auto q = reshape(p, {2, 2, 2, 3});     // split the middle axis
            auto s = reshape(q, {2, 4, 3});
            auto t = matmul(permute(s, {0, 2, 1}), s);  // [2, 3, 3]
            return bt::weighted_sum(softmax(masked_fill(t, blocked, -1e9)));
        },
        {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, DropoutWithFixedMask) {
    auto x = bt::random_tensor({40}, 17);
    const auto r = bt::check_gradients([&] { return bt::weighted_sum(dropout(x, 0.3, true, CounterRng(5))); }, {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, SumMeanReductions) {
    auto x = bt::random_tensor({3, 3}, 18);
    const auto r = bt::check_gradients([&] { return add(mean(mul(x, x)), scale(sum(x), 0.3)); }, {x});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, MseLoss) {
    auto pred = bt::random_tensor({4, 5}, 19);
    auto target = bt::random_tensor({4, 5}, 20);
    const auto r =
        bt::check_gradients([&] { return mse_loss(pred, target, {true, false, true, true}); }, {pred, target});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, BceLoss) {
    auto probs = bt::random_tensor({6}, 21, true, 0.05, 0.95);
    const auto r = bt::check_gradients([&] { return bce_loss(probs, {1, 0, 0, 1, 1, 0}); }, {probs});
    EXPECT_LT(r.max_rel_error, kGradTol);
}

TEST(GradCheck, SigmoidIntoBce) {
    auto logits = bt::random_tensor({5}, 22, true, -3, 3);
    const auto r = bt::check_gradients([&] { return bce_loss(sigmoid(logits), {0, 1, 1, 0, 1}); }, {logits});
    EXPECT_LT(r.max_rel_error, kGradTol);
}
