#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "shan/attention.hpp"
#include "shan/blocks.hpp"
#include "shan/layers.hpp"
#include "shan/ops.hpp"
#include "shan/rng.hpp"

namespace shan {

using KeyValues = std::map<std::string, std::string>;

/// Architecture hyperparameters and ablation switches.
struct ModelConfig {
    std::size_t shallow_channels = 32;
    std::size_t shallow_blocks = 4;
    std::size_t deep_channels = 16;
    std::size_t deep_blocks = 4;
    std::size_t density_channels = 16;
    std::size_t downsample_factor = 4;

    std::size_t sha_reduction = 4;
    std::size_t sha_restore_kernel = 3;
    bool sha_maxpool = true;
    bool sha_shuffle = true;
    std::size_t cot_kernel = 3;
    std::size_t cot_groups = 4;
    std::size_t tail_depth = 2;

    bool use_sha = true;
    bool use_fa = false; // FA in place of SHA in the shallow layers (when use_sha is off)
    bool use_cot = true;
    bool use_aff = true;
    bool use_deep = true;
    bool use_density = true;

    std::uint64_t seed = 0;

    /// Full-size configuration: 8 MHAC blocks at 256 channels, 10 MHAB blocks at 16, density at 64.
    static ModelConfig paper() {
        ModelConfig c;
        c.shallow_channels = 256;
        c.shallow_blocks = 8;
        c.deep_channels = 16;
        c.deep_blocks = 10;
        c.density_channels = 64;
        return c;
    }

    static ModelConfig desk() { return ModelConfig{}; }

    SHAConfig sha(std::size_t channels) const {
        return SHAConfig{channels, sha_reduction, 2, sha_restore_kernel, sha_maxpool, sha_shuffle};
    }

    AttentionKind shallow_attention() const {
        if (use_sha) return AttentionKind::sha;
        if (use_fa) return AttentionKind::fa;
        return AttentionKind::none;
    }

    BlockConfig block(std::size_t channels, AttentionKind attention) const {
        BlockConfig b;
        b.channels = channels;
        b.cot_kernel = cot_kernel;
        b.cot_groups = cot_groups;
        b.tail_depth = tail_depth;
        b.use_cot = use_cot;
        b.use_aff = use_aff;
        b.attention = attention;
        b.sha = sha(channels);
        return b;
    }

    void validate() const {
        if (downsample_factor != 4) throw ArgumentError("ModelConfig: downsample_factor must be 4");
        for (auto [name, v] : {std::pair{"shallow_channels", shallow_channels},
                               std::pair{"shallow_blocks", shallow_blocks},
                               std::pair{"deep_channels", deep_channels}, std::pair{"deep_blocks", deep_blocks},
                               std::pair{"density_channels", density_channels},
                               std::pair{"tail_depth", tail_depth}})
            if (v == 0) throw ArgumentError(std::string("ModelConfig: ") + name + " must be >= 1");
        if (shallow_channels % 4 != 0)
            throw ArgumentError("ModelConfig: shallow_channels must be divisible by 4 (decoder halves twice)");
        sha(shallow_channels).validate();
        sha(shallow_channels / 2).validate();
        sha(shallow_channels / 4).validate();
        sha(deep_channels).validate();
        sha(density_channels).validate();
        if (use_cot && shallow_channels % cot_groups != 0)
            throw ArgumentError("ModelConfig: shallow_channels not divisible by cot_groups");
    }

    KeyValues to_kv() const {
        KeyValues kv;
        auto b = [](bool v) { return std::string(v ? "1" : "0"); };
        kv["shallow_channels"] = std::to_string(shallow_channels);
        kv["shallow_blocks"] = std::to_string(shallow_blocks);
        kv["deep_channels"] = std::to_string(deep_channels);
        kv["deep_blocks"] = std::to_string(deep_blocks);
        kv["density_channels"] = std::to_string(density_channels);
        kv["downsample_factor"] = std::to_string(downsample_factor);
        kv["sha_reduction"] = std::to_string(sha_reduction);
        kv["sha_restore_kernel"] = std::to_string(sha_restore_kernel);
        kv["sha_maxpool"] = b(sha_maxpool);
        kv["sha_shuffle"] = b(sha_shuffle);
        kv["cot_kernel"] = std::to_string(cot_kernel);
        kv["cot_groups"] = std::to_string(cot_groups);
        kv["tail_depth"] = std::to_string(tail_depth);
        kv["use_sha"] = b(use_sha);
        kv["use_fa"] = b(use_fa);
        kv["use_cot"] = b(use_cot);
        kv["use_aff"] = b(use_aff);
        kv["use_deep"] = b(use_deep);
        kv["use_density"] = b(use_density);
        kv["seed"] = std::to_string(seed);
        return kv;
    }

    /// Applies recognised keys; unknown keys are an error.
    void apply(const KeyValues& kv) {
        for (const auto& [key, value] : kv) {
            auto num = [&] { return static_cast<std::size_t>(std::stoull(value)); };
            auto flag = [&] {
                if (value == "1" || value == "true") return true;
                if (value == "0" || value == "false") return false;
                throw ArgumentError("ModelConfig: '" + key + "' expects a boolean, got '" + value + "'");
            };
            if (key == "shallow_channels") shallow_channels = num();
            else if (key == "shallow_blocks") shallow_blocks = num();
            else if (key == "deep_channels") deep_channels = num();
            else if (key == "deep_blocks") deep_blocks = num();
            else if (key == "density_channels") density_channels = num();
            else if (key == "downsample_factor") downsample_factor = num();
            else if (key == "sha_reduction") sha_reduction = num();
            else if (key == "sha_restore_kernel") sha_restore_kernel = num();
            else if (key == "sha_maxpool") sha_maxpool = flag();
            else if (key == "sha_shuffle") sha_shuffle = flag();
            else if (key == "cot_kernel") cot_kernel = num();
            else if (key == "cot_groups") cot_groups = num();
            else if (key == "tail_depth") tail_depth = num();
            else if (key == "use_sha") use_sha = flag();
            else if (key == "use_fa") use_fa = flag();
            else if (key == "use_cot") use_cot = flag();
            else if (key == "use_aff") use_aff = flag();
            else if (key == "use_deep") use_deep = flag();
            else if (key == "use_density") use_density = flag();
            else if (key == "seed") seed = std::stoull(value);
            else throw ArgumentError("ModelConfig: unknown key '" + key + "'");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Density map M, N x 1 x H x W, values in (0, 1).
template <typename T>
struct DensityMap {
    Var<T> map;
};

template <typename T>
struct ModelOutput {
    Var<T> pseudo;  // S(x) in [0,1] image space
    Var<T> final;   // D(x)
    DensityMap<T> density;
};

/// Encoder: two stride-2 convs each followed by attention; trunk of MHAC
/// blocks with the post-stem feature added at the midpoint and at the end;
/// decoder: two (nearest x2, 3x3 conv, attention) stages; Tail residual.
template <typename T>
class ShallowLayers {
public:
    ShallowLayers() = default;
    ShallowLayers(ParamBuilder<T> b, const ModelConfig& cfg) {
        const std::size_t c = cfg.shallow_channels;
        const AttentionKind att = cfg.shallow_attention();
        stem_conv_[0] = Conv<T>(b.sub("stem0.conv"), ConvSpec::square(3, c, 3, 2));
        stem_att_[0] = AttentionUnit<T>(b.sub("stem0"), att, cfg.sha(c));
        stem_conv_[1] = Conv<T>(b.sub("stem1.conv"), ConvSpec::square(c, c, 3, 2));
        stem_att_[1] = AttentionUnit<T>(b.sub("stem1"), att, cfg.sha(c));
        const BlockConfig bc = cfg.block(c, att);
        for (std::size_t i = 0; i < cfg.shallow_blocks; ++i)
            trunk_.emplace_back(b.sub("mhac" + std::to_string(i)), bc);
        up_conv_[0] = Conv<T>(b.sub("up0.conv"), ConvSpec::square(c, c / 2, 3));
        up_att_[0] = AttentionUnit<T>(b.sub("up0"), att, cfg.sha(c / 2));
        up_conv_[1] = Conv<T>(b.sub("up1.conv"), ConvSpec::square(c / 2, c / 4, 3));
        up_att_[1] = AttentionUnit<T>(b.sub("up1"), att, cfg.sha(c / 4));
        tail_ = Tail<T>(b.sub("tail"), c / 4, cfg.tail_depth);
        channels_ = c;
    }

    struct Result {
        Var<T> pseudo; // normalized space
        Var<T> feats;  // N x C x H/4 x W/4
    };

    /// x in normalized [-1, 1] space.
    Result operator()(const Var<T>& x) const {
        detail::require_rank("shallow_forward", x.shape(), 4);
        if (x.dim(1) != 3) throw ShapeError("shallow_forward", "C", "expected 3 input channels");
        if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
            throw ShapeError("shallow_forward", "H/W",
                             "spatial size " + shape_str(x.shape()) +
                                 " must be divisible by 4; reflect-pad the image before inference");
        Var<T> f0 = stem_att_[1](stem_conv_[1](stem_att_[0](stem_conv_[0](x))));
        Var<T> h = f0;
        const std::size_t mid = trunk_.size() / 2;
        for (std::size_t i = 0; i < trunk_.size(); ++i) {
            h = trunk_[i](h);
            if (i + 1 == mid) h = add(h, f0);
        }
        h = add(h, f0);
        Var<T> d = h;
        for (int s = 0; s < 2; ++s) d = up_att_[s](up_conv_[s](upsample_nearest(d, 2)));
        return {add(tail_(d), x), h};
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        std::uint64_t f = 0;
        const std::size_t h2 = h / 2, w2 = w / 2, h4 = h / 4, w4 = w / 4;
        f += stem_conv_[0].spec().flops(n, h, w) + stem_att_[0].flops(n, h2, w2);
        f += stem_conv_[1].spec().flops(n, h2, w2) + stem_att_[1].flops(n, h4, w4);
        for (const auto& blk : trunk_) f += blk.flops(n, h4, w4);
        const std::uint64_t skips = trunk_.size() / 2 >= 1 ? 2 : 1;
        f += skips * n * channels_ * h4 * w4;
        f += up_conv_[0].spec().flops(n, h2, w2) + up_att_[0].flops(n, h2, w2);
        f += up_conv_[1].spec().flops(n, h, w) + up_att_[1].flops(n, h, w);
        f += tail_.flops(n, h, w) + 3ULL * n * h * w;
        return f;
    }

private:
    std::size_t channels_ = 0;
    Conv<T> stem_conv_[2];
    AttentionUnit<T> stem_att_[2];
    std::vector<MHAC<T>> trunk_;
    Conv<T> up_conv_[2];
    AttentionUnit<T> up_att_[2];
    Tail<T> tail_;
};

/// Hazy and pseudo-clean images, concatenated on channels, to a sigmoid map.
template <typename T>
class DensityModule {
public:
    DensityModule() = default;
    DensityModule(ParamBuilder<T> b, const ModelConfig& cfg) {
        const std::size_t c = cfg.density_channels;
        conv0_ = Conv<T>(b.sub("conv0"), ConvSpec::square(6, c, 3, 1, PadMode::reflect));
        sha_ = SHA<T>(b.sub("sha"), cfg.sha(c));
        conv1_ = Conv<T>(b.sub("conv1"), ConvSpec::square(c, 1, 3, 1, PadMode::reflect));
    }

    DensityMap<T> operator()(const Var<T>& pseudo, const Var<T>& hazy) const {
        if (pseudo.shape() != hazy.shape())
            throw ShapeError("density_estimate", "shape",
                             shape_str(pseudo.shape()) + " vs " + shape_str(hazy.shape()));
        return {sigmoid(conv1_(sha_(conv0_(concat<T>({pseudo, hazy}, 1)))))};
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        return conv0_.spec().flops(n, h, w) + sha_.flops(n, h, w) + conv1_.spec().flops(n, h, w) + n * h * w;
    }

private:
    Conv<T> conv0_;
    SHA<T> sha_;
    Conv<T> conv1_;
};

/// F_out = F_in * M, the single-channel map broadcast over channels.
template <typename T>
Var<T> refine_with_density(const Var<T>& feat, const DensityMap<T>& m) {
    detail::require_rank("refine_with_density", feat.shape(), 4);
    detail::require_rank("refine_with_density(map)", m.map.shape(), 4);
    const auto& fs = feat.shape();
    const auto& ms = m.map.shape();
    if (ms[1] != 1) throw ShapeError("refine_with_density", "C", "density map must have one channel");
    if (fs[0] != ms[0] || fs[2] != ms[2] || fs[3] != ms[3])
        throw ShapeError("refine_with_density", "H/W", shape_str(fs) + " vs map " + shape_str(ms));
    return mul(feat, m.map);
}

/// Full-resolution refiner: head conv, MHAB stack with AFF injection of the
/// refined shallow features at the midpoint, Tail residual over S(x).
template <typename T>
class DeepLayers {
public:
    DeepLayers() = default;
    DeepLayers(ParamBuilder<T> b, const ModelConfig& cfg) : channels_(cfg.deep_channels) {
        head_ = Conv<T>(b.sub("head"), ConvSpec::square(3, channels_, 3));
        const BlockConfig bc = cfg.block(channels_, AttentionKind::sha);
        for (std::size_t i = 0; i < cfg.deep_blocks; ++i) blocks_.emplace_back(b.sub("mhab" + std::to_string(i)), bc);
        aff_ = AFF<T>(b.sub("aff"));
        tail_ = Tail<T>(b.sub("tail"), channels_, cfg.tail_depth);
    }

    std::size_t fuse_after() const { return std::max<std::size_t>(1, blocks_.size() / 2) - 1; }

    /// x and pseudo in normalized space; returns D(x) in normalized space.
    Var<T> operator()(const Var<T>& x, const Var<T>& refined_shallow, const Var<T>& pseudo) const {
        Var<T> h = head_(x);
        if (refined_shallow.shape() != h.shape())
            throw ShapeError("deep_forward", "shape",
                             "refined shallow features " + shape_str(refined_shallow.shape()) +
                                 " do not match deep stream " + shape_str(h.shape()));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i](h);
            if (i == fuse_after()) h = aff_(h, refined_shallow);
        }
        return add(tail_(h), pseudo);
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        std::uint64_t f = head_.spec().flops(n, h, w);
        for (const auto& blk : blocks_) f += blk.flops(n, h, w);
        f += AFF<T>::flops(n, channels_, h, w);
        return f + tail_.flops(n, h, w) + 3ULL * n * h * w;
    }

private:
    std::size_t channels_ = 0;
    Conv<T> head_;
    std::vector<MHAB<T>> blocks_;
    AFF<T> aff_;
    Tail<T> tail_;
};

/// End-to-end model. Inputs and outputs are images in [0, 1]; internally the
/// network runs on [-1, 1].
template <typename T>
class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        SplitMix64 rng(cfg_.seed);
        ParamBuilder<T> root(params_, rng);
        shallow_ = ShallowLayers<T>(root.sub("shallow"), cfg_);
        if (cfg_.use_density) density_ = DensityModule<T>(root.sub("density"), cfg_);
        if (cfg_.use_deep) {
            handoff_ = Conv<T>(root.sub("handoff"), ConvSpec::square(cfg_.shallow_channels, cfg_.deep_channels, 1));
            deep_ = DeepLayers<T>(root.sub("deep"), cfg_);
        }
    }

    // Parameters are shared handles; copying would alias them.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    ModelOutput<T> operator()(const Var<T>& image) const {
        Var<T> x = affine(image, T(2), T(-1));
        auto s = shallow_(x);
        ModelOutput<T> out;
        out.pseudo = to_image(s.pseudo);
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        if (cfg_.use_density) out.density = density_(s.pseudo, x);
        else out.density = {Var<T>(Tensor<T>(Shape{n, 1, h, w}, T(1)))};
        if (!cfg_.use_deep) {
            out.final = out.pseudo;
            return out;
        }
        Var<T> refined = upsample_nearest(handoff_(s.feats), cfg_.downsample_factor);
        if (cfg_.use_density) refined = refine_with_density(refined, out.density);
        out.final = to_image(deep_(x, refined, s.pseudo));
        return out;
    }

    std::uint64_t flops(std::size_t n, std::size_t h, std::size_t w) const {
        std::uint64_t f = 3ULL * n * h * w * 2; // normalize in, denormalize S(x)
        f += shallow_.flops(n, h, w);
        if (cfg_.use_density) f += density_.flops(n, h, w);
        if (cfg_.use_deep) {
            f += handoff_.spec().flops(n, h / 4, w / 4) + deep_.flops(n, h, w) + 3ULL * n * h * w;
            if (cfg_.use_density) f += n * cfg_.deep_channels * h * w;
        }
        return f;
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const ShallowLayers<T>& shallow() const { return shallow_; }
    const DensityModule<T>& density() const { return density_; }
    const DeepLayers<T>& deep() const { return deep_; }
    const Conv<T>& handoff() const { return handoff_; }

private:
    static Var<T> to_image(const Var<T>& v) { return affine(v, T(0.5), T(0.5)); }

    ModelConfig cfg_;
    ParameterSet<T> params_;
    ShallowLayers<T> shallow_;
    DensityModule<T> density_;
    Conv<T> handoff_;
    DeepLayers<T> deep_;
};

} // namespace shan
