#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "shan/shan.hpp"

using namespace shan;
using oracle::random_tensor;

namespace {

Var<double> cv(Shape s, std::vector<double> v) { return Var<double>(Tensor<double>(std::move(s), std::move(v))); }

} // namespace

// --- conv2d -----------------------------------------------------------------

TEST(Conv2d, IdentityKernel) {
    auto x = cv({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = cv({1, 1, 1, 1}, {1});
    auto b = cv({1}, {0});
    auto y = conv2d(x, w, &b, 1, PaddingSpec{PadMode::zero, 0});
    EXPECT_EQ(y.value().storage(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Conv2d, AveragingConstantWithReflectPadding) {
    Var<double> x(Tensor<double>(Shape{1, 1, 5, 4}, 0.37));
    Var<double> w(Tensor<double>(Shape{1, 1, 3, 3}, 1.0 / 9.0));
    auto y = conv2d<double>(x, w, nullptr, 1, PaddingSpec{PadMode::reflect, 1});
    ASSERT_EQ(y.shape(), (Shape{1, 1, 5, 4}));
    for (double v : y.value().storage()) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Conv2d, StridedZeroPadMatchesDirectSum) {
    SplitMix64 rng(11);
    auto x = random_tensor(rng, {2, 3, 5, 5});
    auto w = random_tensor(rng, {4, 3, 3, 3});
    auto b = random_tensor(rng, {4});
    Var<double> bv(b);
    auto y = conv2d(Var<double>(x), Var<double>(w), &bv, 2, PaddingSpec{PadMode::zero, 1});
    auto ref = oracle::conv2d(x, w, &b, 2, 1, 1, false, 1);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(oracle::max_rel_diff(y.value(), ref), 1e-6);
}

TEST(Conv2d, ExhaustiveSmallConfigurationsMatchOracle) {
    SplitMix64 rng(5);
    int cases = 0;
    for (std::size_t stride : {1, 2})
        for (std::size_t pad : {0, 1})
            for (bool reflect : {false, true})
                for (std::size_t cin : {1, 2, 4})
                    for (std::size_t groups : {std::size_t{1}, cin}) {
                        const std::size_t h = 3 + rng.below(6), w = 3 + rng.below(6);
                        const std::size_t cout = groups * (1 + rng.below(2));
                        const std::size_t k = 1 + 2 * rng.below(2);
                        if (reflect && pad == 0) continue;
                        auto x = random_tensor(rng, {1 + rng.below(2), cin, h, w});
                        auto wt = random_tensor(rng, {cout, cin / groups, k, k});
                        auto b = random_tensor(rng, {cout});
                        Var<double> bv(b);
                        auto y = conv2d_ex(Var<double>(x), Var<double>(wt), &bv, stride, pad, pad,
                                           reflect ? PadMode::reflect : PadMode::zero, groups);
                        auto ref = oracle::conv2d(x, wt, &b, stride, pad, pad, reflect, groups);
                        ASSERT_EQ(y.shape(), ref.shape());
                        EXPECT_LT(oracle::max_rel_diff(y.value(), ref), 1e-9)
                            << "stride " << stride << " pad " << pad << " groups " << groups;
                        ++cases;
                    }
    EXPECT_EQ(cases, 36);
}

TEST(Conv2d, NonSquareKernelAndPadding) {
    SplitMix64 rng(3);
    auto x = random_tensor(rng, {1, 4, 1, 9});
    auto w = random_tensor(rng, {3, 4, 1, 3});
    auto y = conv2d_ex<double>(Var<double>(x), Var<double>(w), nullptr, 1, 0, 1, PadMode::zero, 1);
    auto ref = oracle::conv2d(x, w, nullptr, 1, 0, 1, false, 1);
    EXPECT_LT(oracle::max_rel_diff(y.value(), ref), 1e-12);
}

TEST(Conv2d, ErrorsNameTheDimension) {
    Var<double> x(Tensor<double>(Shape{1, 3, 4, 4}));
    Var<double> w(Tensor<double>(Shape{2, 2, 3, 3}));
    try {
        conv2d<double>(x, w, nullptr, 1, PaddingSpec{});
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_EQ(e.op(), "conv2d");
    }
    Var<double> w3(Tensor<double>(Shape{2, 3, 3, 3}));
    EXPECT_THROW(conv2d<double>(x, w3, nullptr, 1, PaddingSpec{PadMode::reflect, 4}), ShapeError);
    Var<double> small(Tensor<double>(Shape{1, 3, 2, 2}));
    EXPECT_THROW(conv2d<double>(small, w3, nullptr, 1, PaddingSpec{}), ShapeError);
    Var<double> wg(Tensor<double>(Shape{2, 1, 3, 3}));
    EXPECT_THROW(conv2d<double>(x, wg, nullptr, 1, PaddingSpec{}, 2), ShapeError) << "3 channels, 2 groups";
    Var<double> bad_bias(Tensor<double>(Shape{3}));
    EXPECT_THROW(conv2d<double>(x, w3, &bad_bias, 1, PaddingSpec{}), ShapeError);
}

TEST(Conv2d, FlopCountMatchesFormula) {
    Var<float> x(Tensor<float>(Shape{2, 4, 6, 6}));
    Var<float> w(Tensor<float>(Shape{6, 2, 3, 3}));
    FlopScope scope;
    conv2d<float>(x, w, nullptr, 2, PaddingSpec{PadMode::zero, 1}, 2);
    // 2 * k^2 * Cin/g * Cout * Ho * Wo * N
    EXPECT_EQ(scope.count(), 2u * 9 * 2 * 6 * 3 * 3 * 2);
}

// --- pooling ----------------------------------------------------------------

TEST(DirectionalPool, SpecExamples) {
    auto x = cv({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(directional_pool(x, PoolAxis::horizontal, PoolKind::avg).value().storage(),
              (std::vector<double>{1.5, 3.5}));
    EXPECT_EQ(directional_pool(x, PoolAxis::vertical, PoolKind::max).value().storage(),
              (std::vector<double>{3, 4}));
}

TEST(DirectionalPool, MatchesLoopOracleExactly) {
    SplitMix64 rng(8);
    auto x = random_tensor(rng, {1, 8, 7, 5});
    for (bool horiz : {true, false})
        for (bool mx : {true, false}) {
            auto y = directional_pool(Var<double>(x), horiz ? PoolAxis::horizontal : PoolAxis::vertical,
                                      mx ? PoolKind::max : PoolKind::avg);
            auto ref = oracle::directional_pool(x, horiz, mx);
            ASSERT_EQ(y.shape(), ref.shape());
            if (mx) EXPECT_EQ(y.value().storage(), ref.storage());
            else EXPECT_LT(oracle::max_rel_diff(y.value(), ref), 1e-14);
        }
}

TEST(DirectionalPool, AvgCommutesWithScalingMaxWithMonotoneMaps) {
    SplitMix64 rng(9);
    auto x = random_tensor(rng, {2, 3, 4, 6});
    const double alpha = 2.75;
    Tensor<double> xs(x.shape());
    Tensor<double> xm(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        xs[i] = alpha * x[i];
        xm[i] = std::tanh(x[i]);
    }
    for (auto axis : {PoolAxis::horizontal, PoolAxis::vertical}) {
        auto a = directional_pool(Var<double>(x), axis, PoolKind::avg).value();
        auto as = directional_pool(Var<double>(xs), axis, PoolKind::avg).value();
        for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(as[i], alpha * a[i], 1e-12);
        auto m = directional_pool(Var<double>(x), axis, PoolKind::max).value();
        auto mm = directional_pool(Var<double>(xm), axis, PoolKind::max).value();
        for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_DOUBLE_EQ(mm[i], std::tanh(m[i]));
    }
}

TEST(GlobalAvgPool, MeanPerChannel) {
    auto x = cv({1, 2, 1, 2}, {1, 3, -2, 6});
    EXPECT_EQ(global_avg_pool(x).value().storage(), (std::vector<double>{2, 2}));
}

// --- channel shuffle ---------------------------------------------------------

TEST(ChannelShuffle, SpecPermutations) {
    auto four = cv({1, 4, 1}, {0, 1, 2, 3});
    EXPECT_EQ(channel_shuffle(four, 2).value().storage(), (std::vector<double>{0, 2, 1, 3}));
    auto six = cv({1, 6, 1}, {0, 1, 2, 3, 4, 5});
    EXPECT_EQ(channel_shuffle(six, 2).value().storage(), (std::vector<double>{0, 3, 1, 4, 2, 5}));
    EXPECT_EQ(channel_shuffle(six, 1).value().storage(), six.value().storage());
    EXPECT_THROW(channel_shuffle(six, 4), ShapeError);
}

TEST(ChannelShuffle, InversePermutationRestoresInput) {
    SplitMix64 rng(2);
    for (std::size_t c : {2, 4, 6, 8, 12})
        for (std::size_t g = 1; g <= c; ++g) {
            if (c % g) continue;
            auto x = random_tensor(rng, {2, c, 3});
            // shuffling with C/g groups undoes a shuffle with g groups
            auto y = channel_shuffle(channel_shuffle(Var<double>(x), g), c / g);
            EXPECT_EQ(y.value().storage(), x.storage()) << "C=" << c << " g=" << g;
            EXPECT_EQ(channel_shuffle(Var<double>(x), g).value().storage(), oracle::channel_shuffle(x, g).storage());
        }
}

// --- activations --------------------------------------------------------------

TEST(Activation, SpecExamples) {
    auto x = cv({3}, {-1, 3, 8});
    EXPECT_EQ(relu6(x).value().storage(), (std::vector<double>{0, 3, 6}));
    EXPECT_DOUBLE_EQ(sigmoid(cv({1}, {0})).value()[0], 0.5);
    EXPECT_DOUBLE_EQ(elu(cv({1}, {0})).value()[0], 0.0);
    EXPECT_NEAR(elu(cv({1}, {-50})).value()[0], -1.0, 1e-15);
    EXPECT_NEAR(tanh(cv({1}, {0.3})).value()[0], std::tanh(0.3), 1e-15);
}

// --- instance norm ------------------------------------------------------------

TEST(InstanceNorm, SpecExamples) {
    Var<double> c(Tensor<double>(Shape{1, 1, 2, 2}, 5.0));
    const auto flat = instance_norm(c, 1e-5).value();
    for (double v : flat.storage()) EXPECT_DOUBLE_EQ(v, 0.0);
    auto y = instance_norm(cv({1, 1, 1, 2}, {-1, 1}), 1e-12).value();
    EXPECT_NEAR(y[0], -1.0, 1e-9);
    EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(InstanceNorm, RandomChannelMoments) {
    SplitMix64 rng(4);
    auto x = random_tensor(rng, {2, 3, 8, 9}, -4, 7);
    auto y = instance_norm(Var<double>(x), 1e-5).value();
    const std::size_t hw = 72;
    for (std::size_t p = 0; p < 6; ++p) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < hw; ++i) m += y[p * hw + i];
        m /= hw;
        for (std::size_t i = 0; i < hw; ++i) v += (y[p * hw + i] - m) * (y[p * hw + i] - m);
        v /= hw;
        EXPECT_LT(std::abs(m), 1e-6);
        EXPECT_NEAR(v, 1.0, 1e-4);
    }
}

TEST(InstanceNorm, InvariantUnderPerChannelAffine) {
    SplitMix64 rng(6);
    auto x = random_tensor(rng, {1, 3, 5, 5});
    Tensor<double> z(x.shape());
    const double scale[3] = {0.5, 3.0, 11.0}, shift[3] = {-2.0, 0.25, 7.0};
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 25; ++i) z[c * 25 + i] = scale[c] * x[c * 25 + i] + shift[c];
    auto a = instance_norm(Var<double>(x), 1e-5).value();
    auto b = instance_norm(Var<double>(z), 1e-5).value();
    EXPECT_LT(max_abs_diff(a, b), 1e-4);
}

// --- upsample -----------------------------------------------------------------

TEST(Upsample, Replication) {
    auto x = cv({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(upsample_nearest(x, 2).value().storage(),
              (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
    EXPECT_EQ(upsample_nearest(x, 1).value().storage(), x.value().storage());
    Var<double> f(Tensor<double>(Shape{1, 2, 16, 16}));
    EXPECT_EQ(upsample_nearest(upsample_nearest(f, 2), 2).shape(), (Shape{1, 2, 64, 64}));
}

// --- shape ops and arithmetic --------------------------------------------------

TEST(ShapeOps, ConcatSliceRoundTrip) {
    SplitMix64 rng(1);
    auto a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 3, 5});
    auto c = concat<double>({Var<double>(a), Var<double>(b)}, 2);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 9}));
    EXPECT_EQ(slice(c, 2, 0, 4).value().storage(), a.storage());
    EXPECT_EQ(slice(c, 2, 4, 5).value().storage(), b.storage());
    EXPECT_THROW(slice(c, 2, 5, 5), ShapeError);
    EXPECT_THROW(concat<double>({Var<double>(a), Var<double>(random_tensor(rng, {2, 2, 5}))}, 2), ShapeError);
}

TEST(Arithmetic, BroadcastMatchesLoop) {
    SplitMix64 rng(12);
    auto a = random_tensor(rng, {2, 3, 4, 5}), m = random_tensor(rng, {2, 1, 4, 5});
    auto y = mul(Var<double>(a), Var<double>(m)).value();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 5; ++w)
                    EXPECT_DOUBLE_EQ(y.at(n, c, h, w), a.at(n, c, h, w) * m.at(n, 0, h, w));
    EXPECT_THROW(add(Var<double>(a), Var<double>(random_tensor(rng, {2, 2, 4, 5}))), ShapeError);
}

TEST(Softmax, SumsToOneAlongAxis) {
    SplitMix64 rng(13);
    auto x = random_tensor(rng, {2, 4, 3}, -20, 20);
    auto y = softmax(Var<double>(x), 1).value();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 3; ++k) {
            double s = 0;
            for (std::size_t c = 0; c < 4; ++c) s += y[(n * 4 + c) * 3 + k];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
}

TEST(LocalAggregate, UniformWeightsAverageNeighbourhood) {
    SplitMix64 rng(14);
    auto v = random_tensor(rng, {1, 2, 4, 4});
    Var<double> w(Tensor<double>(Shape{1, 9, 4, 4}, 1.0));
    auto y = local_aggregate(Var<double>(v), w, 3, 1).value();
    // interior pixel (1,1): plain sum of the 3x3 neighbourhood
    double s = 0;
    for (std::size_t dy = 0; dy < 3; ++dy)
        for (std::size_t dx = 0; dx < 3; ++dx) s += v.at(0, 1, dy, dx);
    EXPECT_NEAR(y.at(0, 1, 1, 1), s, 1e-12);
    // corner (0,0): zero padding keeps only 4 taps
    double corner = v.at(0, 0, 0, 0) + v.at(0, 0, 0, 1) + v.at(0, 0, 1, 0) + v.at(0, 0, 1, 1);
    EXPECT_NEAR(y.at(0, 0, 0, 0), corner, 1e-12);
}

TEST(Charbonnier, SpecExamples) {
    Var<double> x(Tensor<double>(Shape{1, 3, 2, 2}, 0.4));
    EXPECT_NEAR(charbonnier(x, x, 1e-3).value()[0], 1e-3, 1e-15);
    Var<double> y(Tensor<double>(Shape{1, 3, 2, 2}, 0.4 - 3e-3));
    EXPECT_NEAR(charbonnier(x, y, 1e-3).value()[0], std::sqrt(1e-5), 1e-9);
    Var<double> z(Tensor<double>(Shape{1, 3, 2, 2}, 1.4));
    EXPECT_NEAR(charbonnier(z, x, 1e-3).value()[0], 1.0000005, 1e-9);
}

TEST(Charbonnier, SymmetricAndBoundedBelowByEps) {
    SplitMix64 rng(15);
    auto a = random_tensor(rng, {1, 3, 4, 4}), b = random_tensor(rng, {1, 3, 4, 4});
    const double ab = charbonnier(Var<double>(a), Var<double>(b), 1e-3).value()[0];
    const double ba = charbonnier(Var<double>(b), Var<double>(a), 1e-3).value()[0];
    EXPECT_DOUBLE_EQ(ab, ba);
    EXPECT_GT(ab, 1e-3);
    EXPECT_THROW(charbonnier(Var<double>(a), Var<double>(random_tensor(rng, {1, 3, 4, 5})), 1e-3), ShapeError);
}
