#include <gtest/gtest.h>

#include <cmath>

#include "shan/shan.hpp"

using namespace shan;

namespace {

Scene<double> flat_scene(double j, double d, std::size_t h = 2, std::size_t w = 2) {
    return {Tensor<double>(Shape{3, h, w}, j), Tensor<double>(Shape{1, h, w}, d)};
}

} // namespace

TEST(Haze, ScatteringExamples) {
    HazeParams p;
    p.atmospheric_light = {1.0, 1.0, 1.0};
    p.beta = 1.0;
    auto pair = synthesize_hazy(flat_scene(0.2, std::log(2.0)), p);
    for (double t : pair.transmission.storage()) EXPECT_NEAR(t, 0.5, 1e-12);
    for (double v : pair.hazy.storage()) EXPECT_NEAR(v, 0.6, 1e-12);

    auto clear = synthesize_hazy(flat_scene(0.3, 0.0), p);
    EXPECT_EQ(clear.hazy.storage(), clear.clean.storage()) << "t = 1 leaves the image unchanged";

    p.atmospheric_light = {0.8, 0.9, 1.0};
    auto far = synthesize_hazy(flat_scene(0.3, 60.0), p);
    EXPECT_NEAR(far.hazy[0], 0.8, 1e-12);
    EXPECT_NEAR(far.hazy[11], 1.0, 1e-12);
}

TEST(Haze, ParameterValidation) {
    HazeParams p;
    p.atmospheric_light = {0.5, 1.0, 1.0};
    EXPECT_THROW(synthesize_hazy(flat_scene(0.2, 1.0), p), ArgumentError);
    p.atmospheric_light = {1.0, 1.0, 1.0};
    p.beta = 0.0;
    EXPECT_THROW(synthesize_hazy(flat_scene(0.2, 1.0), p), ArgumentError);
    p.beta = 1.0;
    Scene<double> bad{Tensor<double>(Shape{3, 2, 2}), Tensor<double>(Shape{1, 2, 3})};
    EXPECT_THROW(synthesize_hazy(bad, p), ShapeError);
}

TEST(Haze, InvertRoundTripAndThreshold) {
    auto data = synthesize_dataset<double>(4, 32, 5);
    for (const auto& pr : data) {
        bool ok = true;
        for (double t : pr.transmission.storage()) ok = ok && t >= 0.1;
        if (!ok) {
            EXPECT_THROW(invert_degradation(pr.hazy, pr.transmission, pr.params.atmospheric_light), ArgumentError);
            continue;
        }
        auto j = invert_degradation(pr.hazy, pr.transmission, pr.params.atmospheric_light);
        EXPECT_LT(max_abs_diff(j, pr.clean), 1e-6);
    }
    Tensor<double> t(Shape{1, 2, 2}, 0.05);
    EXPECT_THROW(invert_degradation(Tensor<double>(Shape{3, 2, 2}), t, {1.0, 1.0, 1.0}), ArgumentError);
}

TEST(Haze, DatasetIsDeterministicAndInRange) {
    auto a = synthesize_dataset<float>(3, 32, 11);
    auto b = synthesize_dataset<float>(3, 32, 11);
    auto c = synthesize_dataset<float>(3, 32, 12);
    ASSERT_EQ(a.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a[i].hazy.storage(), b[i].hazy.storage());
        EXPECT_EQ(a[i].hazy.shape(), (Shape{3, 32, 32}));
        EXPECT_EQ(a[i].transmission.shape(), (Shape{1, 32, 32}));
        for (float v : a[i].hazy.storage()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        for (float t : a[i].transmission.storage()) {
            EXPECT_GT(t, 0.0f);
            EXPECT_LE(t, 1.0f);
        }
        a[i].params.validate();
    }
    EXPECT_NE(a[0].hazy.storage(), c[0].hazy.storage());
    EXPECT_NE(a[0].clean.storage(), a[1].clean.storage());
}

TEST(Augment, GroupLaws) {
    Tensor<int> img(Shape{2, 3, 5});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<int>(i);
    auto r90 = augment_image(img, Augment::rot90);
    EXPECT_EQ(r90.shape(), (Shape{2, 5, 3}));
    auto twice = augment_image(r90, Augment::rot90);
    EXPECT_EQ(twice.storage(), augment_image(img, Augment::rot180).storage());
    auto four = augment_image(augment_image(twice, Augment::rot90), Augment::rot90);
    EXPECT_EQ(four.storage(), img.storage());
    EXPECT_EQ(augment_image(augment_image(img, Augment::rot270), Augment::rot90).storage(), img.storage());
    EXPECT_EQ(augment_image(augment_image(img, Augment::hflip), Augment::hflip).storage(), img.storage());
    EXPECT_EQ(augment_image(img, Augment::none).storage(), img.storage());
    // rot90 is counter-clockwise: the top-right pixel moves to the top-left
    EXPECT_EQ(r90[0], img[4]);
}

TEST(Augment, PairStaysCongruent) {
    auto pr = synthesize_dataset<double>(1, 32, 3)[0];
    for (auto op : {Augment::rot90, Augment::rot180, Augment::rot270, Augment::hflip}) {
        auto a = augment(pr, op);
        auto j = invert_degradation(a.hazy, a.transmission, a.params.atmospheric_light, 0.0);
        EXPECT_LT(max_abs_diff(j, a.clean), 1e-6) << augment_name(op);
    }
}

TEST(Patches, SeededCongruentCrops) {
    auto pr = synthesize_dataset<double>(1, 40, 8)[0];
    auto p1 = extract_patches(pr, 16, 5, 42);
    auto p2 = extract_patches(pr, 16, 5, 42);
    ASSERT_EQ(p1.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(p1[i].hazy.storage(), p2[i].hazy.storage());
        EXPECT_EQ(p1[i].hazy.shape(), (Shape{3, 16, 16}));
        auto j = invert_degradation(p1[i].hazy, p1[i].transmission, p1[i].params.atmospheric_light, 0.0);
        EXPECT_LT(max_abs_diff(j, p1[i].clean), 1e-6);
    }
    EXPECT_THROW(extract_patches(pr, 44, 1, 1), ArgumentError);
    EXPECT_THROW(extract_patches(pr, 18, 1, 1), ArgumentError);
    auto whole = extract_patches(pr, 40, 1, 1);
    EXPECT_EQ(whole[0].hazy.storage(), pr.hazy.storage());
}
