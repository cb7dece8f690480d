#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "shan/attention.hpp"
#include "shan/layers.hpp"
#include "shan/ops.hpp"

namespace shan {

enum class AttentionKind { none, sha, fa };

struct BlockConfig {
    std::size_t channels = 64;
    std::size_t cot_kernel = 3;
    std::size_t cot_groups = 4;
    std::size_t tail_depth = 2;
    bool use_cot = true;
    bool use_aff = true;
    AttentionKind attention = AttentionKind::sha;
    SHAConfig sha; // channels filled in from `channels`

    SHAConfig sha_for(std::size_t c) const {
        SHAConfig s = sha;
        s.channels = c;
        return s;
    }
};

/// Attention slot used inside blocks: SHA, FA or pass-through.
template <typename T>
class AttentionUnit {
public:
    AttentionUnit() = default;
    AttentionUnit(ParamBuilder<T> b, AttentionKind kind, const SHAConfig& sha) : kind_(kind) {
        if (kind == AttentionKind::sha) sha_ = SHA<T>(b.sub("sha"), sha);
        else if (kind == AttentionKind::fa) fa_ = FA<T>(b.sub("fa"), sha.channels);
    }

    Var<T> operator()(const Var<T>& x) const {
        switch (kind_) {
        case AttentionKind::sha: return sha_(x);
        case AttentionKind::fa: return fa_(x);
        case AttentionKind::none: break;
        }
        return x;
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        switch (kind_) {
        case AttentionKind::sha: return sha_.flops(n, h, w);
        case AttentionKind::fa: return fa_.flops(n, h, w);
        case AttentionKind::none: break;
        }
        return 0;
    }

private:
    AttentionKind kind_ = AttentionKind::none;
    SHA<T> sha_;
    FA<T> fa_;
};

/// sigma(theta) * a + sigma(1 - theta) * b. The coefficients are not renormalized.
template <typename T>
Var<T> aff_fuse(const Var<T>& a, const Var<T>& b, const Var<T>& theta) {
    if (a.shape() != b.shape())
        throw ShapeError("aff_fuse", "shape", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (theta.numel() != 1) throw ShapeError("aff_fuse", "theta", "must be a single scalar");
    Shape ones(a.shape().size(), 1);
    Var<T> ca = reshape(sigmoid(theta), ones);
    Var<T> cb = reshape(sigmoid(affine(theta, T(-1), T(1))), ones);
    return add(mul(a, ca), mul(b, cb));
}

template <typename T>
class AFF {
public:
    AFF() = default;
    explicit AFF(ParamBuilder<T> b) { theta_ = b.constant("theta", Shape{1}, T(0)); }

    Var<T> operator()(const Var<T>& a, const Var<T>& b) const { return aff_fuse(a, b, theta_); }
    const Var<T>& theta() const { return theta_; }

    static std::uint64_t flops(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        // 2 scalar sigmoids + 1 affine, two scaled copies and their sum
        return 3 + 3ULL * n * c * h * w;
    }

private:
    Var<T> theta_;
};

/// Multi-branch hybrid attention block: attention over the ReLU6 of parallel
/// 3x3 and 1x1 convolutions, plus the untouched input.
template <typename T>
class MHAB {
public:
    MHAB() = default;
    MHAB(ParamBuilder<T> b, const BlockConfig& cfg) : channels_(cfg.channels) {
        const std::size_t c = cfg.channels;
        conv3_ = Conv<T>(b.sub("conv3"), ConvSpec::square(c, c, 3));
        conv1_ = Conv<T>(b.sub("conv1"), ConvSpec::square(c, c, 1));
        attn_ = AttentionUnit<T>(b, cfg.attention, cfg.sha_for(c));
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> branch = relu6(add(conv3_(x), conv1_(x)));
        return add(attn_(branch), x);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        const std::uint64_t e = n * channels_ * h * w;
        return conv3_.spec().flops(n, h, w) + conv1_.spec().flops(n, h, w) + 2 * e + attn_.flops(n, h, w) + e;
    }

private:
    std::size_t channels_ = 0;
    Conv<T> conv3_, conv1_;
    AttentionUnit<T> attn_;
};

/// Contextual transformer block with instance norm and ELU.
///
/// Static context: grouped k x k conv of the input. The concatenation of
/// static context and input goes through two 1x1 convs to give, per head
/// and position, k*k logits; their softmax weights the 1x1-projected values
/// over the local window. Output is static + dynamic context.
template <typename T>
class CoT {
public:
    CoT() = default;
    CoT(ParamBuilder<T> b, std::size_t channels, std::size_t kernel = 3, std::size_t groups = 4)
        : channels_(channels), kernel_(kernel), heads_(groups) {
        if (kernel % 2 == 0) throw ArgumentError("CoT: kernel must be odd");
        if (groups == 0 || channels % groups != 0)
            throw ArgumentError("CoT: channels " + std::to_string(channels) + " not divisible by groups " +
                                std::to_string(groups));
        mid_ = std::max<std::size_t>(1, channels / 2);
        key_ = Conv<T>(b.sub("key"), ConvSpec::square(channels, channels, kernel, 1, PadMode::zero, groups, false));
        embed1_ = Conv<T>(b.sub("embed1"), ConvSpec{2 * channels, mid_, 1, 1, 1, 0, 0, PadMode::zero, 1, false});
        embed2_ = Conv<T>(b.sub("embed2"), ConvSpec{mid_, heads_ * kernel * kernel, 1, 1, 1, 0, 0});
        value_ = Conv<T>(b.sub("value"), ConvSpec{channels, channels, 1, 1, 1, 0, 0, PadMode::zero, 1, false});
    }

    Var<T> operator()(const Var<T>& x) const {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::size_t taps = kernel_ * kernel_;
        Var<T> key = elu(instance_norm(key_(x)));
        Var<T> e = embed2_(elu(instance_norm(embed1_(concat<T>({key, x}, 1)))));
        e = reshape(softmax(reshape(e, Shape{n, heads_, taps, h * w}), 2), Shape{n, heads_ * taps, h, w});
        Var<T> dynamic = local_aggregate(value_(x), e, kernel_, heads_);
        return add(key, dynamic);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        const std::uint64_t hw = h * w, c = channels_, taps = kernel_ * kernel_;
        std::uint64_t f = key_.spec().flops(n, h, w) + n * hw * c * (4 + 1); // key conv, IN, ELU
        f += embed1_.spec().flops(n, h, w) + n * hw * mid_ * (4 + 1);
        f += embed2_.spec().flops(n, h, w) + 3 * n * hw * heads_ * taps;      // softmax
        f += value_.spec().flops(n, h, w) + 2 * taps * n * c * hw + n * c * hw; // aggregate, sum
        return f;
    }

    const Conv<T>& value_conv() const { return value_; }

private:
    std::size_t channels_ = 0, kernel_ = 3, heads_ = 4, mid_ = 1;
    Conv<T> key_, embed1_, embed2_, value_;
};

/// MHAB and CoT in parallel, fused by AFF. Switches reproduce the ablation ladder:
/// without CoT the block is a plain MHAB; without AFF the branches are summed.
template <typename T>
class MHAC {
public:
    MHAC() = default;
    MHAC(ParamBuilder<T> b, const BlockConfig& cfg) : cfg_(cfg) {
        mhab_ = MHAB<T>(b.sub("mhab"), cfg);
        if (cfg.use_cot) {
            cot_ = CoT<T>(b.sub("cot"), cfg.channels, cfg.cot_kernel, cfg.cot_groups);
            if (cfg.use_aff) aff_ = AFF<T>(b.sub("aff"));
        }
    }

    Var<T> operator()(const Var<T>& x) const {
        if (!cfg_.use_cot) return mhab_(x);
        if (cfg_.use_aff) return aff_(mhab_(x), cot_(x));
        return add(mhab_(x), cot_(x));
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        std::uint64_t f = mhab_.flops(n, h, w);
        if (!cfg_.use_cot) return f;
        f += cot_.flops(n, h, w);
        return f + (cfg_.use_aff ? AFF<T>::flops(n, cfg_.channels, h, w) : n * cfg_.channels * h * w);
    }

private:
    BlockConfig cfg_;
    MHAB<T> mhab_;
    CoT<T> cot_;
    AFF<T> aff_;
};

/// Reconstruction head: depth-1 (3x3 conv + ReLU6), a 3x3 conv to RGB, tanh.
template <typename T>
class Tail {
public:
    Tail() = default;
    Tail(ParamBuilder<T> b, std::size_t channels, std::size_t depth = 2) {
        if (depth == 0) throw ArgumentError("Tail: depth must be >= 1");
        for (std::size_t i = 0; i < depth; ++i) {
            const std::size_t out = (i + 1 == depth) ? 3 : channels;
            convs_.emplace_back(b.sub("conv" + std::to_string(i)), ConvSpec::square(channels, out, 3));
        }
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            h = convs_[i](h);
            if (i + 1 < convs_.size()) h = relu6(h);
        }
        return tanh(h);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        std::uint64_t f = 0;
        for (const auto& c : convs_) f += c.spec().flops(n, h, w) + n * c.spec().out * h * w;
        return f;
    }

private:
    std::vector<Conv<T>> convs_;
};

} // namespace shan
