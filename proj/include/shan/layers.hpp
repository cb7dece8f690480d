#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "shan/autodiff.hpp"
#include "shan/ops.hpp"
#include "shan/rng.hpp"

namespace shan {

/// Creates named parameters under a dotted prefix, drawing initial values
/// from a shared seeded generator.
template <typename T>
class ParamBuilder {
public:
    ParamBuilder(ParameterSet<T>& set, SplitMix64& rng, std::string prefix = "")
        : set_(&set), rng_(&rng), prefix_(std::move(prefix)) {}

    ParamBuilder sub(const std::string& name) const { return ParamBuilder(*set_, *rng_, path(name)); }

    std::string path(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }

    // Uniform in +-sqrt(1/fan_in).
    Var<T> uniform(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
        Tensor<T> t(std::move(shape));
        for (auto& v : t.storage()) v = static_cast<T>(rng_->uniform(-bound, bound));
        return set_->add(path(name), std::move(t));
    }

    Var<T> constant(const std::string& name, Shape shape, T value) {
        return set_->add(path(name), Tensor<T>(std::move(shape), value));
    }

private:
    ParameterSet<T>* set_;
    SplitMix64* rng_;
    std::string prefix_;
};

struct ConvSpec {
    std::size_t in = 1, out = 1;
    std::size_t kh = 3, kw = 3;
    std::size_t stride = 1;
    std::size_t pad_h = 1, pad_w = 1;
    PadMode mode = PadMode::zero;
    std::size_t groups = 1;
    bool bias = true;

    // k x k, "same" padding for odd k.
    static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                           PadMode mode = PadMode::zero, std::size_t groups = 1, bool bias = true) {
        return {in, out, k, k, stride, (k - 1) / 2, (k - 1) / 2, mode, groups, bias};
    }

    std::size_t param_count() const { return out * (in / groups) * kh * kw + (bias ? out : 0); }

    std::size_t out_extent(std::size_t extent, std::size_t k, std::size_t pad) const {
        return (extent + 2 * pad - k) / stride + 1;
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        return 2ULL * kh * kw * (in / groups) * out * out_extent(h, kh, pad_h) * out_extent(w, kw, pad_w) * n;
    }
};

template <typename T>
class Conv {
public:
    Conv() = default;
    Conv(ParamBuilder<T> b, const ConvSpec& spec) : spec_(spec) {
        const std::size_t fan_in = (spec.in / spec.groups) * spec.kh * spec.kw;
        weight_ = b.uniform("weight", Shape{spec.out, spec.in / spec.groups, spec.kh, spec.kw}, fan_in);
        if (spec.bias) bias_ = b.uniform("bias", Shape{spec.out}, fan_in);
    }

    Var<T> operator()(const Var<T>& x) const {
        return conv2d_ex(x, weight_, spec_.bias ? &bias_ : nullptr, spec_.stride, spec_.pad_h, spec_.pad_w,
                         spec_.mode, spec_.groups);
    }

    const ConvSpec& spec() const { return spec_; }
    const Var<T>& weight() const { return weight_; }
    const Var<T>& bias() const { return bias_; }

private:
    ConvSpec spec_;
    Var<T> weight_;
    Var<T> bias_;
};

} // namespace shan
