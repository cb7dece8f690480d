#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "shan/shan.hpp"

using namespace shan;

TEST(Tensor, ConstructionValidatesShape) {
    Tensor<float> t(Shape{2, 3}, 1.5f);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_FLOAT_EQ(t.sum(), 9.0f);
    EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
    EXPECT_THROW(Tensor<float>(Shape{}), ShapeError);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
}

TEST(Tensor, RowMajorIndexing) {
    Tensor<int> t(Shape{1, 2, 2, 3});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<int>(i);
    EXPECT_EQ(t.at(0, 1, 0, 2), 8);
    EXPECT_EQ(t.at(0, 0, 1, 1), 4);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
    Tensor<double> t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    auto r = t.reshaped(Shape{3, 2});
    EXPECT_EQ(r.storage(), t.storage());
    EXPECT_THROW(t.reshaped(Shape{4, 2}), ShapeError);
}

TEST(Tensor, FiniteAndCast) {
    Tensor<double> t(Shape{3}, std::vector<double>{1.25, -2, 3});
    EXPECT_TRUE(t.all_finite());
    auto f = t.cast<float>();
    EXPECT_FLOAT_EQ(f[0], 1.25f);
    t[1] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_FALSE(t.all_finite());
}

TEST(Rng, SplitMixIsDeterministicAndInRange) {
    SplitMix64 a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next();
        EXPECT_EQ(x, b.next());
        (void)c;
    }
    SplitMix64 r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        EXPECT_LT(r.below(5), 5u);
    }
    EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
    EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}

TEST(Rng, KnownSplitMixSequence) {
    // reference values of the standard splitmix64 generator seeded with 0
    SplitMix64 r(0);
    EXPECT_EQ(r.next(), 0xE220A8397B1DCDAFull);
    EXPECT_EQ(r.next(), 0x6E789E6AA1B965F4ull);
}

TEST(Autodiff, LinearFunctionGradientIsInput) {
    Var<double> w = Var<double>::leaf(Tensor<double>(Shape{3}, std::vector<double>{0.5, -1, 2}));
    Var<double> x(Tensor<double>(Shape{3}, std::vector<double>{4, 5, 6}));
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    backward(sum(mul(w, x)));
    ASSERT_FALSE(w.grad().empty());
    EXPECT_EQ(w.grad().storage(), (std::vector<double>{4, 5, 6}));
    EXPECT_EQ(tape.size(), 0u) << "tape is cleared after backward";
}

TEST(Autodiff, SigmoidSlopeAtZero) {
    Var<double> w = Var<double>::leaf(Tensor<double>(Shape{4}, 0.0));
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    backward(sum(sigmoid(w)));
    for (double g : w.grad().storage()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
    Var<double> w = Var<double>::leaf(Tensor<double>(Shape{1}, 3.0));
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    Var<double> y = mul(w, w);
    backward(sum(add(y, w)));
    EXPECT_DOUBLE_EQ(w.grad()[0], 7.0); // 2w + 1
}

TEST(Autodiff, BackwardErrors) {
    Var<double> w = Var<double>::leaf(Tensor<double>(Shape{2}, 1.0));
    EXPECT_THROW(backward(sum(w)), GradError) << "no tape";
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    EXPECT_THROW(backward(mul(w, w)), GradError) << "non-scalar loss";
    Var<double> constant(Tensor<double>(Shape{1}, 2.0));
    EXPECT_THROW(backward(constant), GradError) << "not recorded";
}

TEST(Autodiff, NoTapeRecordsNoClosures) {
    Var<double> w = Var<double>::leaf(Tensor<double>(Shape{2}, 1.0));
    Var<double> y = mul(w, w);
    EXPECT_FALSE(static_cast<bool>(y.node()->backward));
}

TEST(Autodiff, FiniteCheckNamesOp) {
    Var<double> x(Tensor<double>(Shape{2}, std::vector<double>{1000, 1}));
    FiniteCheckScope check;
    try {
        Var<double> big(Tensor<double>(Shape{2}, std::numeric_limits<double>::max()));
        (void)mul(big, big);
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_EQ(e.op(), "mul");
    }
}

TEST(Autodiff, FlopScopeCountsElementwise) {
    Var<float> a(Tensor<float>(Shape{2, 3}, 1.0f));
    FlopScope scope;
    (void)add(a, a);
    (void)relu6(a);
    EXPECT_EQ(scope.count(), 12u);
}

TEST(ParameterSet, UniqueNamesAndCounts) {
    ParameterSet<float> set;
    set.add("b.weight", Tensor<float>(Shape{2, 3}));
    set.add("a.bias", Tensor<float>(Shape{4}));
    EXPECT_THROW(set.add("a.bias", Tensor<float>(Shape{1})), ArgumentError);
    EXPECT_EQ(set.element_count(), 10u);
    EXPECT_EQ(set.element_count("a"), 4u);
    std::vector<std::string> names;
    for (const auto& [n, _] : set) names.push_back(n);
    EXPECT_EQ(names, (std::vector<std::string>{"a.bias", "b.weight"}));
}

TEST(ParameterSet, GradShapeMatchesValue) {
    ParameterSet<double> set;
    Var<double> w = set.add("w", Tensor<double>(Shape{2, 2}, 1.0));
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    backward(sum(mul(w, w)));
    EXPECT_EQ(w.grad().shape(), w.value().shape());
    set.zero_grad();
    EXPECT_TRUE(w.grad().empty());
}
