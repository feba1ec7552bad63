#include <gtest/gtest.h>

#include <cmath>

#include "cornerdet/gradcheck.hpp"
#include "cornerdet/ops.hpp"
#include "cornerdet/optim.hpp"
#include "test_util.hpp"

using namespace cornerdet;
using cornerdet::testing::random_tensor;
using cornerdet::testing::values;

namespace {

Tensor t2(std::vector<double> v, std::size_t h, std::size_t w) { return Tensor::from_data({1, 1, h, w}, std::move(v)); }

}  // namespace

TEST(Tensor, ShapeAndIndexing) {
    const Tensor t = Tensor::zeros({2, 3, 4, 5});
    EXPECT_EQ(t.numel(), 120u);
    EXPECT_EQ(t.index(1, 2, 3, 4), 119u);
    EXPECT_THROW(Tensor::from_data({1, 1, 2, 2}, {1.0}), Error);
}

TEST(Conv2d, IdentityKernelReproducesInput) {
    const Tensor x = random_tensor({2, 1, 5, 6}, 1);
    std::vector<double> k(9, 0.0);
    k[4] = 1.0;
    const Tensor y = conv2d(x, Tensor::from_data({1, 1, 3, 3}, k), Tensor(), 1, 1);
    EXPECT_EQ(values(y), values(x));
}

TEST(Conv2d, DotProductFixture) {
    const Tensor y = conv2d(t2({1, 2, 3, 4}, 2, 2), Tensor::full({1, 1, 2, 2}, 1.0), Tensor(), 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.item(), 10.0);
}

TEST(Conv2d, ScalarKernelDoubles) {
    const Tensor x = random_tensor({1, 1, 3, 4}, 2);
    const Tensor y = conv2d(x, Tensor::full({1, 1, 1, 1}, 2.0), Tensor(), 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 2.0 * x.data()[i]);
}

TEST(Conv2d, OutputExtentFormula) {
    const Tensor y = conv2d(Tensor::zeros({1, 2, 9, 7}), Tensor::zeros({3, 2, 3, 3}), Tensor(), 2, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 5, 4}));
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
    try {
        conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor(), 1, 1);
        FAIL();
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[1,2,4,4]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[1,3,3,3]"), std::string::npos) << msg;
    }
}

TEST(Conv2d, Linearity) {
    const Tensor k = random_tensor({3, 2, 3, 3}, 3);
    const Tensor x = random_tensor({1, 2, 6, 5}, 4);
    const Tensor y = random_tensor({1, 2, 6, 5}, 5);
    const Tensor lhs = conv2d(add(scale(x, 1.5), scale(y, -0.7)), k, Tensor(), 1, 1);
    const Tensor rhs = add(scale(conv2d(x, k, Tensor(), 1, 1), 1.5), scale(conv2d(y, k, Tensor(), 1, 1), -0.7));
    for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-10);
}

TEST(TransposeConv, SingleTapExpansion) {
    const Tensor y = transpose_conv2d(t2({2}, 1, 1), Tensor::full({1, 1, 2, 2}, 1.0), 2);
    EXPECT_EQ(values(y), (std::vector<double>{2, 2, 2, 2}));
}

TEST(TransposeConv, ZeroKernelAndExtent) {
    const Tensor y = transpose_conv2d(random_tensor({1, 2, 3, 4}, 6), Tensor::zeros({2, 1, 2, 2}), 2);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 6, 8}));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(transpose_conv2d(t2({1}, 1, 1), Tensor::zeros({1, 1, 2, 2}), 0), Error);
}

TEST(BatchNorm, TwoValueFixture) {
    RunningStats stats(1);
    const Tensor y = batch_norm(t2({1, 3}, 1, 2), Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1, 1, 1, 1}), 0.0,
                                BatchNormMode::train, stats);
    EXPECT_DOUBLE_EQ(y.data()[0], -1.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 1.0);
    // Running stats fold in the batch mean 2 and the unbiased variance 2.
    EXPECT_DOUBLE_EQ(stats.mean[0], 0.2);
    EXPECT_DOUBLE_EQ(stats.var[0], 0.9 + 0.1 * 2.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
    RunningStats stats(2);
    const Tensor beta = Tensor::from_data({1, 2, 1, 1}, {0.5, -1.5});
    const Tensor y = batch_norm(random_tensor({3, 2, 2, 2}, 7), Tensor::zeros({1, 2, 1, 1}), beta, kBatchNormEps,
                                BatchNormMode::train, stats);
    for (std::size_t n = 0; n < 3; ++n) {
        EXPECT_DOUBLE_EQ(y.at(n, 0, 1, 1), 0.5);
        EXPECT_DOUBLE_EQ(y.at(n, 1, 0, 1), -1.5);
    }
}

TEST(BatchNorm, ConstantChannelIsFinite) {
    RunningStats stats(1);
    const Tensor y = batch_norm(Tensor::full({2, 1, 3, 3}, 4.0), Tensor::full({1, 1, 1, 1}, 3.0),
                                Tensor::full({1, 1, 1, 1}, 0.25), kBatchNormEps, BatchNormMode::train, stats);
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
    RunningStats stats(1);
    stats.mean[0] = 1.0;
    stats.var[0] = 4.0;
    const Tensor y = batch_norm(t2({3, 5}, 1, 2), Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1, 1, 1, 1}), 0.0,
                                BatchNormMode::eval, stats);
    EXPECT_DOUBLE_EQ(y.data()[0], 1.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 2.0);
    EXPECT_DOUBLE_EQ(stats.mean[0], 1.0);
}

TEST(BatchNorm, ChannelMismatchRejected) {
    RunningStats stats(3);
    EXPECT_THROW(batch_norm(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({1, 3, 1, 1}), Tensor::zeros({1, 3, 1, 1}),
                            kBatchNormEps, BatchNormMode::train, stats),
                 Error);
}

TEST(Activation, Definitions) {
    const Tensor r = relu(t2({-1, 2}, 1, 2));
    EXPECT_EQ(values(r), (std::vector<double>{0, 2}));
    EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
    const Tensor big = sigmoid(t2({-800, 800}, 1, 2));
    EXPECT_GE(big.data()[0], 0.0);
    EXPECT_LE(big.data()[1], 1.0);
    for (double v : big.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Activation, SigmoidGradientAtZero) {
    const Tensor x = Tensor::scalar(0.0, true);
    sigmoid(x).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(BilinearSample, Fixtures) {
    const std::vector<double> plane = {0, 4, 1, 7};
    EXPECT_DOUBLE_EQ(bilinear_sample(plane, 2, 2, 1, 1), 7.0);
    EXPECT_DOUBLE_EQ(bilinear_sample(plane, 2, 2, 0.5, 0), 2.0);
    EXPECT_DOUBLE_EQ(bilinear_sample(plane, 2, 2, -5, 0), 0.0);
}

TEST(Combine, SumAndConcat) {
    const Tensor a = random_tensor({1, 2, 3, 3}, 8);
    EXPECT_EQ(values(add(a, Tensor::zeros(a.shape()))), values(a));
    const Tensor b = random_tensor({1, 3, 3, 3}, 9);
    const Tensor c = concat_channels(a, b);
    EXPECT_EQ(c.shape().c, 5u);
    EXPECT_EQ(c.at(0, 0, 1, 2), a.at(0, 0, 1, 2));
    EXPECT_EQ(c.at(0, 2, 1, 2), b.at(0, 0, 1, 2));
    EXPECT_THROW(add(a, b), Error);
    EXPECT_THROW(concat_channels(a, Tensor::zeros({1, 1, 2, 3})), Error);
}

TEST(Backward, LinearAndKink) {
    const Tensor x = Tensor::from_data({1, 1, 1, 3}, {1, -2, 3}, true);
    sum(x).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

    const Tensor y = Tensor::from_data({1, 1, 1, 2}, {-1, 2}, true);
    sum(relu(y)).backward();
    EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{0, 1}));
}

TEST(Backward, NonScalarRejected) { EXPECT_THROW(Tensor::zeros({1, 1, 2, 2}, true).backward(), Error); }

TEST(Backward, AccumulatesAcrossCalls) {
    const Tensor x = random_tensor({1, 2, 4, 4}, 10, 1.0, true);
    const Tensor k = random_tensor({2, 2, 3, 3}, 11, 1.0, true);
    auto loss = [&] { return sum(mul(conv2d(x, k, Tensor(), 1, 1), conv2d(x, k, Tensor(), 1, 1))); };
    loss().backward();
    const std::vector<double> once(k.grad().begin(), k.grad().end());
    loss().backward();
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(k.grad()[i], 2.0 * once[i]);
}

TEST(Backward, UnreachableParameterGetsNoGradient) {
    const Tensor used = random_tensor({1, 1, 2, 2}, 12, 1.0, true);
    const Tensor unused = random_tensor({1, 1, 2, 2}, 13, 1.0, true);
    sum(used).backward();
    EXPECT_TRUE(unused.grad().empty());
    EXPECT_FALSE(used.grad().empty());
}

TEST(Determinism, RepeatedForwardIsBitwiseIdentical) {
    const Tensor x = random_tensor({2, 3, 7, 6}, 14);
    const Tensor k = random_tensor({4, 3, 3, 3}, 15);
    EXPECT_EQ(values(conv2d(x, k, Tensor(), 2, 1)), values(conv2d(x, k, Tensor(), 2, 1)));
}

TEST(FiniteDiff, IdentityAndSquare) {
    const Tensor x = random_tensor({1, 1, 2, 3}, 16, 1.0, true);
    const auto id = finite_diff_check([](const Tensor& t) { return t; }, x, 1e-4, 1e-4);
    EXPECT_TRUE(id.pass);
    EXPECT_LT(id.max_rel_error, 1e-9);

    const Tensor three = Tensor::scalar(3.0, true);
    mul(three, three).backward();
    EXPECT_DOUBLE_EQ(three.grad()[0], 6.0);
    const auto sq = finite_diff_check([](const Tensor& t) { return mul(t, t); }, Tensor::scalar(3.0, true), 1e-4, 1e-4);
    EXPECT_TRUE(sq.pass);
    EXPECT_LT(sq.max_rel_error, 1e-6);
}

TEST(FiniteDiff, SkipsCoordinatesAtReluKink) {
    const Tensor x = Tensor::from_data({1, 1, 1, 3}, {0.0, 1.0, -1.0}, true);
    const auto r = finite_diff_check([](const Tensor& t) { return relu(t); }, x, 1e-4, 1e-4);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.skipped, 1u);
    EXPECT_EQ(r.checked, 2u);
}

TEST(FiniteDiff, DetectsWrongGradient) {
    // Detaching one factor halves the reverse-mode gradient of x*x.
    const Tensor x = random_tensor({1, 1, 2, 2}, 17, 1.0, true);
    const auto r = finite_diff_check([](const Tensor& t) { return mul(t, t.detach()); }, x, 1e-4, 1e-4);
    EXPECT_FALSE(r.pass);
}

class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, MatchFiniteDifferences) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    const GradCheckOptions opts;
    std::vector<Tensor> in = {random_tensor({2, 2, 5, 4}, seed, 1.0, true),
                              random_tensor({3, 2, 3, 3}, seed + 100, 0.5, true),
                              random_tensor({1, 3, 1, 1}, seed + 200, 0.5, true)};
    EXPECT_TRUE(finite_diff_check([](const auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); }, in, opts).pass);

    std::vector<Tensor> tin = {random_tensor({1, 3, 3, 2}, seed + 1, 1.0, true),
                               random_tensor({3, 2, 2, 2}, seed + 2, 0.5, true)};
    EXPECT_TRUE(finite_diff_check([](const auto& v) { return transpose_conv2d(v[0], v[1], 2); }, tin, opts).pass);

    std::vector<Tensor> bn = {random_tensor({3, 2, 3, 3}, seed + 3, 1.0, true),
                              random_tensor({1, 2, 1, 1}, seed + 4, 1.0, true),
                              random_tensor({1, 2, 1, 1}, seed + 5, 1.0, true)};
    EXPECT_TRUE(finite_diff_check(
                    [](const auto& v) {
                        RunningStats s(2);
                        return batch_norm(v[0], v[1], v[2], kBatchNormEps, BatchNormMode::train, s);
                    },
                    bn, opts)
                    .pass);

    const Tensor a = random_tensor({1, 2, 3, 3}, seed + 6, 1.0, true);
    EXPECT_TRUE(finite_diff_check([](const Tensor& t) { return relu(t); }, a, 1e-4, 1e-4).pass);
    EXPECT_TRUE(finite_diff_check([](const Tensor& t) { return sigmoid(t); }, a, 1e-4, 1e-4).pass);

    std::vector<Tensor> cm = {random_tensor({1, 2, 3, 3}, seed + 7, 1.0, true),
                              random_tensor({1, 1, 3, 3}, seed + 8, 1.0, true)};
    EXPECT_TRUE(finite_diff_check([](const auto& v) { return concat_channels(v[0], v[1]); }, cm, opts).pass);

    std::vector<Tensor> bs = {random_tensor({1, 2, 4, 5}, seed + 9, 1.0, true),
                              cornerdet::testing::uniform_tensor({1, 2, 3, 3}, seed + 10, -1.5, 5.5, true)};
    EXPECT_TRUE(finite_diff_check([](const auto& v) { return bilinear_sample(v[0], v[1]); }, bs, opts).pass);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradients, ::testing::Range(1, 21));

TEST(Adam, ZeroGradientLeavesParameter) {
    std::vector<Parameter> p = {{"w", Tensor::full({1, 1, 1, 1}, 3.0, true)}};
    OptimizerState s;
    adam_step(p, s, AdamConfig{});
    EXPECT_EQ(p[0].tensor.item(), 3.0);
    EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    for (double g : {1.0, -1.0}) {
        std::vector<Parameter> p = {{"w", Tensor::full({1, 1, 1, 1}, 0.0, true)}};
        scale(p[0].tensor, g).backward();
        OptimizerState s;
        AdamConfig cfg;
        cfg.lr = 0.1;
        adam_step(p, s, cfg);
        EXPECT_NEAR(p[0].tensor.item(), -0.1 * g, 1e-8);
    }
}
