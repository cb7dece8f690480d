#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "shan/shan.hpp"

using namespace shan;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.shallow_channels = 16;
    c.shallow_blocks = 2;
    c.deep_channels = 8;
    c.deep_blocks = 2;
    c.density_channels = 8;
    return c;
}

Tensor<float> image(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t n = 1) {
    SplitMix64 rng(seed);
    return oracle::random_tensor_f(rng, {n, 3, h, w}, 0.0, 1.0);
}

} // namespace

TEST(Model, ZeroWeightsAreIdentity) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{64, 64}, {64, 96}}) {
        Model<float> m(ModelConfig{});
        m.params().fill(0.0f);
        auto x = image(h + w, h, w);
        auto out = m(Var<float>(x));
        EXPECT_LE(max_abs_diff(out.pseudo.value(), x), 1e-6f);
        EXPECT_LE(max_abs_diff(out.final.value(), x), 1e-6f);
    }
}

TEST(Model, OutputShapes) {
    Model<float> m(tiny());
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {32, 20}, {12, 40}}) {
        auto out = m(Var<float>(image(1, h, w, 2)));
        EXPECT_EQ(out.pseudo.shape(), (Shape{2, 3, h, w}));
        EXPECT_EQ(out.final.shape(), (Shape{2, 3, h, w}));
        EXPECT_EQ(out.density.map.shape(), (Shape{2, 1, h, w}));
        for (float v : out.density.map.value().storage()) {
            EXPECT_GT(v, 0.0f);
            EXPECT_LT(v, 1.0f);
        }
    }
}

TEST(Model, RejectsSizesNotDivisibleByFour) {
    Model<float> m(tiny());
    try {
        m(Var<float>(image(1, 18, 16)));
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("reflect-pad"), std::string::npos);
    }
    EXPECT_THROW(m(Var<float>(Tensor<float>(Shape{1, 4, 16, 16}))), ShapeError);
}

TEST(Model, ConfigValidation) {
    auto c = tiny();
    c.shallow_channels = 18;
    EXPECT_THROW(Model<float>{c}, ArgumentError);
    c = tiny();
    c.downsample_factor = 2;
    EXPECT_THROW(Model<float>{c}, ArgumentError);
    c = tiny();
    c.deep_blocks = 0;
    EXPECT_THROW(Model<float>{c}, ArgumentError);
}

TEST(Model, SwitchesChangeStructure) {
    auto c = tiny();
    Model<float> full(c);
    c.use_deep = false;
    c.use_density = false;
    Model<float> shallow(c);
    EXPECT_EQ(shallow.params().element_count("deep"), 0u);
    EXPECT_EQ(shallow.params().element_count("density"), 0u);
    EXPECT_EQ(shallow.params().element_count(), full.params().element_count("shallow"));
    auto x = image(3, 16, 16);
    auto out = shallow(Var<float>(x));
    EXPECT_EQ(out.final.value().storage(), out.pseudo.value().storage());
    for (float v : out.density.map.value().storage()) EXPECT_EQ(v, 1.0f);

    c = tiny();
    c.use_density = false;
    Model<float> no_density(c);
    EXPECT_EQ(no_density.params().element_count("density"), 0u);
    EXPECT_GT(no_density.params().element_count("deep"), 0u);
}

TEST(Model, SameSeedSameParameters) {
    Model<float> a(tiny()), b(tiny());
    auto c = tiny();
    c.seed = 9;
    Model<float> d(c);
    const auto& pa = a.params().get("shallow.stem0.conv.weight").value();
    EXPECT_EQ(pa.storage(), b.params().get("shallow.stem0.conv.weight").value().storage());
    EXPECT_NE(pa.storage(), d.params().get("shallow.stem0.conv.weight").value().storage());
}

TEST(Model, EveryParameterReceivesGradient) {
    Model<double> m(tiny());
    SplitMix64 rng(4);
    // move off the zero-init AFF point so all branches carry signal
    for (const auto& [_, p] : m.params()) {
        Var<double> v = p;
        for (auto& x : v.mutable_value().storage()) x += rng.uniform(-0.05, 0.05);
    }
    auto x = oracle::random_tensor(rng, {1, 3, 16, 16}, 0.0, 1.0);
    auto gt = oracle::random_tensor(rng, {1, 3, 16, 16}, 0.0, 1.0);
    GradTape<double> tape;
    TapeScope<double> scope(tape);
    auto out = m(Var<double>(x));
    backward(total_loss(out.pseudo, out.final, Var<double>(gt), 1e-3));
    for (const auto& [name, p] : m.params()) {
        ASSERT_FALSE(p.grad().empty()) << name;
        EXPECT_GT(p.grad().max_abs(), 0.0) << name;
    }
}

TEST(Model, FlopsMatchCountedOps) {
    Model<float> m(tiny());
    Var<float> x(image(2, 16, 24));
    FlopScope scope;
    m(x);
    EXPECT_EQ(scope.count(), m.flops(1, 16, 24));
}

TEST(ModelConfig, KeyValueRoundTrip) {
    auto c = tiny();
    c.use_aff = false;
    c.sha_restore_kernel = 1;
    c.seed = 77;
    ModelConfig d;
    d.apply(c.to_kv());
    EXPECT_EQ(c, d);
    KeyValues bad{{"no_such_key", "1"}};
    EXPECT_THROW(d.apply(bad), ArgumentError);
}
