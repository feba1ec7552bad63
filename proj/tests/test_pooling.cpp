#include <gtest/gtest.h>

#include <cmath>

#include "cornerdet/gradcheck.hpp"
#include "cornerdet/pooling.hpp"
#include "cornerdet/pooling_modules.hpp"
#include "test_util.hpp"

using namespace cornerdet;
using cornerdet::testing::random_tensor;
using cornerdet::testing::values;

namespace {

Tensor grid(std::vector<double> v, std::size_t h, std::size_t w) { return Tensor::from_data({1, 1, h, w}, std::move(v)); }

constexpr Direction kAll[] = {Direction::top, Direction::bottom, Direction::left, Direction::right};

Tensor identity_module(PoolingVariant v, CornerType c, const Tensor& x) {
    ParameterRegistry reg(1);
    CornerPoolModule m(reg, "p", v, c, x.shape().c);
    m.set_identity_branches(true);
    return m(x, Mode::eval);
}

}  // namespace

TEST(DirectionalPool, ColumnAndRowFixtures) {
    EXPECT_EQ(values(directional_pool(grid({1, 3, 2}, 3, 1), Direction::top)), (std::vector<double>{3, 3, 2}));
    EXPECT_EQ(values(directional_pool(grid({1, 3, 2}, 3, 1), Direction::bottom)), (std::vector<double>{1, 3, 3}));
    EXPECT_EQ(values(directional_pool(grid({5, 1, 4}, 1, 3), Direction::right)), (std::vector<double>{5, 5, 5}));
    EXPECT_EQ(values(directional_pool(grid({5, 1, 4}, 1, 3), Direction::left)), (std::vector<double>{5, 4, 4}));
}

TEST(DirectionalPool, ConstantMapUnchanged) {
    const Tensor c = Tensor::full({1, 2, 3, 4}, 1.25);
    for (Direction d : kAll) EXPECT_EQ(values(directional_pool(c, d)), values(c));
}

TEST(DirectionalPool, DegenerateAxesAreIdentity) {
    const Tensor row = random_tensor({1, 1, 1, 6}, 1);
    EXPECT_EQ(values(naive_pool_oracle(row, Direction::top)), values(row));
    EXPECT_EQ(values(directional_pool(row, Direction::top)), values(row));
    const Tensor col = random_tensor({1, 1, 6, 1}, 2);
    EXPECT_EQ(values(naive_pool_oracle(col, Direction::right)), values(col));
    EXPECT_EQ(values(directional_pool(col, Direction::right)), values(col));
}

TEST(DirectionalPool, MatchesOracleOnRandomTensors) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        NormalStream s(seed);
        const Shape shape{1 + seed % 3, 1 + seed % 4, 1 + static_cast<std::size_t>(s.uniform() * 12),
                          1 + static_cast<std::size_t>(s.uniform() * 12)};
        // Rounding creates ties so the tie rule is exercised too.
        Tensor x = random_tensor(shape, seed + 1000, 2.0);
        for (double& v : x.mutable_data()) v = std::round(v);
        for (Direction d : kAll) ASSERT_EQ(values(directional_pool(x, d)), values(naive_pool_oracle(x, d)));
    }
}

TEST(DirectionalPool, IdempotentAndDominant) {
    const Tensor x = random_tensor({2, 2, 7, 5}, 3);
    for (Direction d : kAll) {
        const Tensor once = directional_pool(x, d);
        EXPECT_EQ(values(directional_pool(once, d)), values(once));
        for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_GE(once.data()[i], x.data()[i]);
    }
}

TEST(DirectionalPool, OppositeScansBroadcastAxisMax) {
    const Tensor x = random_tensor({1, 1, 4, 6}, 4);
    const Tensor col = directional_pool(directional_pool(x, Direction::top), Direction::bottom);
    const Tensor row = directional_pool(directional_pool(x, Direction::left), Direction::right);
    for (std::size_t j = 0; j < 6; ++j) {
        double m = -1e300;
        for (std::size_t i = 0; i < 4; ++i) m = std::max(m, x.at(0, 0, i, j));
        for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(col.at(0, 0, i, j), m);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        double m = -1e300;
        for (std::size_t j = 0; j < 6; ++j) m = std::max(m, x.at(0, 0, i, j));
        for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(row.at(0, 0, i, j), m);
    }
}

TEST(DirectionalPool, GradientRoutesToOneSourceAndConservesMass) {
    Tensor x = random_tensor({1, 2, 5, 4}, 5, 1.0, true);
    for (Direction d : kAll) {
        x.zero_grad();
        const Tensor w = random_tensor(x.shape(), 6);
        sum(mul(directional_pool(x, d), w)).backward();
        double in = 0.0, out = 0.0;
        for (double g : x.grad()) in += g;
        for (double g : w.data()) out += g;
        EXPECT_NEAR(in, out, 1e-12);
    }
}

TEST(DirectionalPool, TiesRouteToScanStart) {
    // top scans from the bottom row upward, so the tie goes to the lower cell.
    const Tensor x = Tensor::from_data({1, 1, 2, 1}, {7, 7}, true);
    sum(directional_pool(x, Direction::top)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 2}));
}

TEST(PoolingCores, IdentityBranchTraces) {
    const Tensor f = grid({1, 2, 3, 4}, 2, 2);
    EXPECT_EQ(values(identity_module(PoolingVariant::cp, CornerType::top_left, f)), (std::vector<double>{5, 6, 7, 8}));
    EXPECT_EQ(values(identity_module(PoolingVariant::ccp, CornerType::top_left, f)),
              (std::vector<double>{13, 14, 15, 16}));
    EXPECT_EQ(values(identity_module(PoolingVariant::vhcp, CornerType::top_left, f)),
              (std::vector<double>{7, 8, 11, 12}));

    ParameterRegistry reg(1);
    CenterPoolModule center(reg, "c", 1);
    center.set_identity_branches(true);
    EXPECT_EQ(values(center(grid({1, 2, 0, 3, 0, 4}, 2, 3), Mode::eval)), (std::vector<double>{5, 4, 6, 7, 6, 8}));
}

TEST(PoolingCores, ConstantPropagation) {
    const Tensor c = Tensor::full({1, 1, 3, 3}, 2.0);
    EXPECT_EQ(values(cp_core(c, c, CornerType::top_left)), std::vector<double>(9, 4.0));
    EXPECT_EQ(values(ccp_core(c, c, c, c, CornerType::bottom_right)), std::vector<double>(9, 8.0));
    EXPECT_EQ(values(center_core(c, c)), std::vector<double>(9, 4.0));
}

TEST(PoolingCores, CenterDominatesRowAndColumnMax) {
    const Tensor a = random_tensor({1, 1, 4, 5}, 7);
    const Tensor out = center_core(a, a);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            double rm = -1e300, cm = -1e300;
            for (std::size_t k = 0; k < 5; ++k) rm = std::max(rm, a.at(0, 0, i, k));
            for (std::size_t k = 0; k < 4; ++k) cm = std::max(cm, a.at(0, 0, k, j));
            EXPECT_NEAR(out.at(0, 0, i, j), rm + cm, 1e-12);
        }
    }
}

TEST(PoolingCores, ScanCounts) {
    const Tensor a = random_tensor({1, 2, 4, 4}, 8);
    auto count = [](auto fn) {
        ScanCounter c;
        fn();
        return c.count();
    };
    EXPECT_EQ(count([&] { cp_core(a, a, CornerType::top_left); }), 2u);
    EXPECT_EQ(count([&] { vhcp_core(a, a, a, CornerType::top_left); }), 2u);
    EXPECT_EQ(count([&] { ccp_core(a, a, a, a, CornerType::top_left); }), 4u);
    EXPECT_EQ(count([&] { center_core(a, a); }), 4u);
}

TEST(PoolingCores, VhcpRotationEquivariance) {
    auto rot180 = [](const Tensor& t) {
        const Shape& s = t.shape();
        std::vector<double> v(t.numel());
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t i = 0; i < s.h; ++i)
                for (std::size_t j = 0; j < s.w; ++j) v[t.index(0, c, i, j)] = t.at(0, c, s.h - 1 - i, s.w - 1 - j);
        return Tensor::from_data(s, std::move(v));
    };
    const Tensor a = random_tensor({1, 2, 5, 6}, 9), b = random_tensor({1, 2, 5, 6}, 10),
                 c = random_tensor({1, 2, 5, 6}, 11);
    const Tensor lhs = vhcp_core(rot180(a), rot180(b), rot180(c), CornerType::bottom_right);
    const Tensor rhs = rot180(vhcp_core(a, b, c, CornerType::top_left));
    EXPECT_EQ(values(lhs), values(rhs));
}

TEST(PoolingModules, ParameterOrdering) {
    for (std::size_t ch : {2u, 8u, 16u}) {
        auto count = [&](PoolingVariant v) {
            ParameterRegistry reg(0);
            CornerPoolModule m(reg, "p", v, CornerType::top_left, ch);
            std::size_t n = 0;
            for (const auto& p : reg.parameters()) n += p.tensor.numel();
            return n;
        };
        EXPECT_LT(count(PoolingVariant::cp), count(PoolingVariant::vhcp));
        EXPECT_LT(count(PoolingVariant::vhcp), count(PoolingVariant::ccp));
    }
}

class PoolingGradients : public ::testing::TestWithParam<int> {};

TEST_P(PoolingGradients, ModulesMatchFiniteDifferences) {
    const auto seed = static_cast<std::uint64_t>(GetParam());
    for (PoolingVariant v : {PoolingVariant::cp, PoolingVariant::ccp, PoolingVariant::vhcp}) {
        for (CornerType c : {CornerType::top_left, CornerType::bottom_right}) {
            ParameterRegistry reg(seed);
            CornerPoolModule m(reg, "p", v, c, 2);
            const Tensor x = random_tensor({2, 2, 4, 5}, seed + 50, 1.0, true);
            const auto r = finite_diff_check([&](const Tensor& t) { return m(t, Mode::train); }, x, 1e-4, 1e-4);
            EXPECT_TRUE(r.pass) << to_string(v) << " " << r.max_rel_error;
        }
    }
    ParameterRegistry reg(seed);
    CenterPoolModule center(reg, "c", 2);
    const Tensor x = random_tensor({2, 2, 4, 5}, seed + 60, 1.0, true);
    EXPECT_TRUE(finite_diff_check([&](const Tensor& t) { return center(t, Mode::train); }, x, 1e-4, 1e-4).pass);
}

INSTANTIATE_TEST_SUITE_P(Seeds, PoolingGradients, ::testing::Range(1, 6));

TEST(PoolingVariantNames, ParseAndPrint) {
    EXPECT_EQ(parse_pooling_variant("vhcp"), PoolingVariant::vhcp);
    EXPECT_EQ(to_string(PoolingVariant::ccp), "CCP");
    EXPECT_THROW(parse_pooling_variant("maxpool"), Error);
}
