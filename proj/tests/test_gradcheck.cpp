#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "shan/shan.hpp"

using namespace shan;

TEST(GradCheck, DetectsWrongGradient) {
    // an op whose backward is deliberately off by a factor of two
    Var<double> x = Var<double>::leaf(Tensor<double>(Shape{3}, std::vector<double>{0.3, -0.7, 1.1}));
    auto f = [&] {
        Var<double> y = mul(x, x);
        return record<double>("bad_square", y.value(), {x}, [x](Node<double>& self) {
            Tensor<double> gx(x.shape());
            for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = 4 * x.value()[i] * self.grad[i];
            detail::accumulate(x, gx);
        });
    };
    auto r = grad_check("bad", f, {x});
    EXPECT_FALSE(r.passed(1e-3));
    EXPECT_GT(r.max_rel_error, 0.3);
}

TEST(GradCheck, AcceptsCorrectGradient) {
    Var<double> x = Var<double>::leaf(Tensor<double>(Shape{2, 3}, 0.4));
    auto r = grad_check("ok", [&] { return mul(sigmoid(x), x); }, {x});
    EXPECT_TRUE(r.passed(1e-6));
    EXPECT_EQ(r.checked, 6u);
}

TEST(GradCheck, EveryGroupPasses) {
    const auto groups = gradcheck_groups();
    for (const char* g : {"conv2d", "sha", "cot", "mhac", "aff", "density", "full"})
        EXPECT_NE(std::find(groups.begin(), groups.end(), g), groups.end()) << g;
    for (const auto& r : run_gradcheck()) EXPECT_TRUE(r.passed(1e-3)) << r.name << " " << r.worst;
    EXPECT_THROW(run_gradcheck("nope"), ArgumentError);
}
