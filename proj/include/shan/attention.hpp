#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "shan/layers.hpp"
#include "shan/ops.hpp"

namespace shan {

struct SHAConfig {
    std::size_t channels = 64;
    std::size_t reduction = 4;
    std::size_t shuffle_groups = 2;
    std::size_t restore_kernel = 3;
    bool enable_maxpool = true;
    bool enable_shuffle = true;

    std::size_t reduced() const { return channels / reduction; }

    void validate() const {
        if (channels == 0 || reduction == 0 || channels % reduction != 0)
            throw ArgumentError("SHA: channels " + std::to_string(channels) + " not divisible by reduction " +
                                std::to_string(reduction));
        if (restore_kernel % 2 == 0) throw ArgumentError("SHA: restore_kernel must be odd");
        if (enable_shuffle && (shuffle_groups == 0 || channels % shuffle_groups != 0))
            throw ArgumentError("SHA: channels not divisible by shuffle_groups");
    }
};

/// Intermediate encodings of one SHA pass.
template <typename T>
struct SHAState {
    Tensor<T> v_h;  // N x C x H
    Tensor<T> v_v;  // N x C x W
    Tensor<T> y_h;  // N x C x H
    Tensor<T> y_v;  // N x C x W
    Tensor<T> attn; // N x C x H x W
};

inline std::size_t sha_param_count(const SHAConfig& cfg) {
    cfg.validate();
    const std::size_t c = cfg.channels, cr = cfg.reduced(), k = cfg.restore_kernel;
    return c * cr + cr + k * cr * c + c;
}

/// Separable Hybrid Attention.
///
/// Directional avg (+max) pooling gives per-row and per-column encodings that
/// are concatenated along the length axis, channel-shuffled, squeezed by a
/// 1x1 conv with ReLU6 and restored by one 1-D conv shared by both
/// directions. Their outer product through a sigmoid is the attention map.
template <typename T>
class SHA {
public:
    SHA() = default;
    SHA(ParamBuilder<T> b, SHAConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t k = cfg_.restore_kernel;
        reduce_ = Conv<T>(b.sub("reduce"), ConvSpec{cfg_.channels, cfg_.reduced(), 1, 1, 1, 0, 0});
        restore_ = Conv<T>(b.sub("restore"), ConvSpec{cfg_.reduced(), cfg_.channels, 1, k, 1, 0, (k - 1) / 2});
    }

    Var<T> operator()(const Var<T>& x, SHAState<T>* state = nullptr) const {
        const auto& s = x.shape();
        detail::require_rank("sha", s, 4);
        if (s[1] != cfg_.channels)
            throw ShapeError("sha", "C", "expected " + std::to_string(cfg_.channels) + " channels, got " +
                                             std::to_string(s[1]));
        const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
        Var<T> vh = directional_pool(x, PoolAxis::horizontal, PoolKind::avg);
        Var<T> vv = directional_pool(x, PoolAxis::vertical, PoolKind::avg);
        if (cfg_.enable_maxpool) {
            vh = add(vh, directional_pool(x, PoolAxis::horizontal, PoolKind::max));
            vv = add(vv, directional_pool(x, PoolAxis::vertical, PoolKind::max));
        }
        Var<T> z = concat<T>({vh, vv}, 2);
        if (cfg_.enable_shuffle) z = channel_shuffle(z, cfg_.shuffle_groups);
        z = relu6(reduce_(reshape(z, Shape{n, c, 1, h + w})));
        Var<T> yh = restore_(slice(z, 3, 0, h));
        Var<T> yv = restore_(slice(z, 3, h, w));
        Var<T> attn = sigmoid(mul(reshape(yh, Shape{n, c, h, 1}), yv));
        if (state) {
            state->v_h = vh.value();
            state->v_v = vv.value();
            state->y_h = yh.value().reshaped(Shape{n, c, h});
            state->y_v = yv.value().reshaped(Shape{n, c, w});
            state->attn = attn.value();
        }
        return mul(attn, x);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        const std::uint64_t c = cfg_.channels, cr = cfg_.reduced(), hw = h * w;
        std::uint64_t f = 0;
        const std::uint64_t pools = cfg_.enable_maxpool ? 2 : 1;
        f += 2 * pools * c * hw;                             // directional pools
        if (cfg_.enable_maxpool) f += c * (h + w);          // avg + max
        f += reduce_.spec().flops(1, 1, h + w) + cr * (h + w); // reduce conv, relu6
        f += restore_.spec().flops(1, 1, h) + restore_.spec().flops(1, 1, w);
        f += 3 * c * hw; // outer product, sigmoid, gating
        return f * n;
    }

    const SHAConfig& config() const { return cfg_; }

private:
    SHAConfig cfg_;
    Conv<T> reduce_;
    Conv<T> restore_;
};

/// Squeeze-and-excitation baseline (bias-free FC layers).
template <typename T>
class SE {
public:
    SE() = default;
    SE(ParamBuilder<T> b, std::size_t channels, std::size_t reduction = 16) : channels_(channels) {
        if (reduction == 0 || channels % reduction != 0)
            throw ArgumentError("SE: channels not divisible by reduction");
        hidden_ = channels / reduction;
        fc1_ = Conv<T>(b.sub("fc1"), ConvSpec{channels, hidden_, 1, 1, 1, 0, 0, PadMode::zero, 1, false});
        fc2_ = Conv<T>(b.sub("fc2"), ConvSpec{hidden_, channels, 1, 1, 1, 0, 0, PadMode::zero, 1, false});
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> s = sigmoid(fc2_(relu(fc1_(global_avg_pool(x)))));
        return mul(x, s);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        const std::uint64_t c = channels_, hw = h * w;
        return n * (c * hw + fc1_.spec().flops(1, 1, 1) + hidden_ + fc2_.spec().flops(1, 1, 1) + c + c * hw);
    }

private:
    std::size_t channels_ = 0;
    std::size_t hidden_ = 0;
    Conv<T> fc1_, fc2_;
};

/// Feature attention: channel attention followed by pixel attention.
template <typename T>
class FA {
public:
    FA() = default;
    FA(ParamBuilder<T> b, std::size_t channels) : channels_(channels) {
        hidden_ = std::max<std::size_t>(1, channels / 8);
        ca1_ = Conv<T>(b.sub("ca1"), ConvSpec{channels, hidden_, 1, 1, 1, 0, 0});
        ca2_ = Conv<T>(b.sub("ca2"), ConvSpec{hidden_, channels, 1, 1, 1, 0, 0});
        pa1_ = Conv<T>(b.sub("pa1"), ConvSpec{channels, hidden_, 1, 1, 1, 0, 0});
        pa2_ = Conv<T>(b.sub("pa2"), ConvSpec{hidden_, 1, 1, 1, 1, 0, 0});
    }

    Var<T> operator()(const Var<T>& x) const {
        Var<T> ca = sigmoid(ca2_(relu(ca1_(global_avg_pool(x)))));
        Var<T> y = mul(x, ca);
        Var<T> pa = sigmoid(pa2_(relu(pa1_(y))));
        return mul(y, pa);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        const std::uint64_t c = channels_, hw = h * w, hid = hidden_;
        std::uint64_t f = c * hw + ca1_.spec().flops(1, 1, 1) + hid + ca2_.spec().flops(1, 1, 1) + c + c * hw;
        f += pa1_.spec().flops(1, h, w) + hid * hw + pa2_.spec().flops(1, h, w) + hw + c * hw;
        return f * n;
    }

private:
    std::size_t channels_ = 0;
    std::size_t hidden_ = 0;
    Conv<T> ca1_, ca2_, pa1_, pa2_;
};

} // namespace shan
