#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "shan/error.hpp"
#include "shan/rng.hpp"
#include "shan/tensor.hpp"

namespace shan {

/// Clean image J (3 x H x W) and depth d (1 x H x W), both in [0, 1].
template <typename T = float>
struct Scene {
    Tensor<T> clean;
    Tensor<T> depth;
};

struct HazeParams {
    std::array<double, 3> atmospheric_light{1.0, 1.0, 1.0};
    double beta = 1.0;

    void validate() const {
        for (double a : atmospheric_light)
            if (!(a >= 0.7 && a <= 1.0)) throw ArgumentError("HazeParams: A components must lie in [0.7, 1.0]");
        if (!(beta > 0.0 && beta <= 4.0)) throw ArgumentError("HazeParams: beta must lie in (0, 4]");
    }
};

/// I = J * t + A * (1 - t).
template <typename T = float>
struct HazyPair {
    Tensor<T> hazy;
    Tensor<T> clean;
    Tensor<T> transmission;
    HazeParams params;
};

enum class Augment { none, rot90, rot180, rot270, hflip };

inline const char* augment_name(Augment a) {
    switch (a) {
    case Augment::none: return "none";
    case Augment::rot90: return "rot90";
    case Augment::rot180: return "rot180";
    case Augment::rot270: return "rot270";
    case Augment::hflip: return "hflip";
    }
    return "?";
}

/// t = exp(-beta * d).
template <typename T>
Tensor<T> transmission_from_depth(const Tensor<T>& depth, double beta) {
    if (!(beta > 0.0)) throw ArgumentError("transmission_from_depth: beta must be positive");
    Tensor<T> t(depth.shape());
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(std::exp(-beta * static_cast<double>(depth[i])));
    return t;
}

namespace detail {

inline void require_image(const char* op, const Shape& s, std::size_t channels) {
    if (s.size() != 3 || s[0] != channels)
        throw ShapeError(op, "C", "expected " + std::to_string(channels) + " x H x W, got " + shape_str(s));
}

} // namespace detail

/// Applies the scattering model with a per-channel airlight.
template <typename T>
HazyPair<T> synthesize_hazy(const Scene<T>& scene, const HazeParams& params) {
    params.validate();
    detail::require_image("synthesize_hazy", scene.clean.shape(), 3);
    detail::require_image("synthesize_hazy", scene.depth.shape(), 1);
    const std::size_t h = scene.clean.dim(1), w = scene.clean.dim(2), hw = h * w;
    if (scene.depth.dim(1) != h || scene.depth.dim(2) != w)
        throw ShapeError("synthesize_hazy", "H/W", "depth and clean image sizes differ");
    HazyPair<T> pair;
    pair.clean = scene.clean;
    pair.transmission = transmission_from_depth(scene.depth, params.beta);
    pair.params = params;
    pair.hazy = Tensor<T>(scene.clean.shape());
    for (std::size_t c = 0; c < 3; ++c) {
        const double a = params.atmospheric_light[c];
        for (std::size_t i = 0; i < hw; ++i) {
            const double t = pair.transmission[i];
            double v = static_cast<double>(pair.clean[c * hw + i]) * t + a * (1.0 - t);
            if (v < 0.0 && v > -1e-6) v = 0.0;
            if (v > 1.0 && v < 1.0 + 1e-6) v = 1.0;
            pair.hazy[c * hw + i] = static_cast<T>(v);
        }
    }
    return pair;
}

/// J = (I - A (1 - t)) / t, defined where t >= t_min.
template <typename T>
Tensor<T> invert_degradation(const Tensor<T>& hazy, const Tensor<T>& t, const std::array<double, 3>& a,
                             double t_min = 0.1) {
    detail::require_image("invert_degradation", hazy.shape(), 3);
    detail::require_image("invert_degradation", t.shape(), 1);
    const std::size_t hw = t.numel();
    if (hazy.dim(1) != t.dim(1) || hazy.dim(2) != t.dim(2))
        throw ShapeError("invert_degradation", "H/W", "transmission and image sizes differ");
    for (std::size_t i = 0; i < hw; ++i)
        if (!(static_cast<double>(t[i]) >= t_min))
            throw ArgumentError("invert_degradation: transmission " + std::to_string(static_cast<double>(t[i])) +
                                " below t_min = " + std::to_string(t_min));
    Tensor<T> j(hazy.shape());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < hw; ++i) {
            const double tv = t[i];
            j[c * hw + i] = static_cast<T>((static_cast<double>(hazy[c * hw + i]) - a[c] * (1.0 - tv)) / tv);
        }
    return j;
}

namespace detail {

// Smooth value noise on a lattice with `cells` cells along the short side.
class ValueNoise {
public:
    ValueNoise(SplitMix64& rng, std::size_t gx, std::size_t gy) : gx_(gx + 2), gy_(gy + 2), v_(gx_ * gy_) {
        for (auto& x : v_) x = rng.uniform();
    }
    double operator()(double x, double y) const {
        const std::size_t ix = static_cast<std::size_t>(x), iy = static_cast<std::size_t>(y);
        const double fx = smooth(x - ix), fy = smooth(y - iy);
        const double a = at(ix, iy), b = at(ix + 1, iy), c = at(ix, iy + 1), d = at(ix + 1, iy + 1);
        return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
    }

private:
    static double smooth(double t) { return t * t * (3 - 2 * t); }
    double at(std::size_t x, std::size_t y) const { return v_[std::min(y, gy_ - 1) * gx_ + std::min(x, gx_ - 1)]; }
    std::size_t gx_, gy_;
    std::vector<double> v_;
};

inline double fractal(const std::vector<ValueNoise>& octaves, double u, double v, std::size_t base_cells) {
    double sum = 0, amp = 1, norm = 0;
    double cells = static_cast<double>(base_cells);
    for (const auto& o : octaves) {
        sum += amp * o(u * cells, v * cells);
        norm += amp;
        amp *= 0.5;
        cells *= 2;
    }
    return sum / norm;
}

} // namespace detail

/// Deterministic procedural scene: multi-octave colour noise over a sky-to-ground
/// gradient, with rectangles for hard edges. Depth grows towards the top of the
/// frame, is perturbed by low-frequency noise, and rectangles sit at their own
/// (nearer) depth.
template <typename T = float>
Scene<T> generate_scene(std::uint64_t seed, std::size_t h, std::size_t w) {
    if (h < 16 || w < 16) throw ArgumentError("generate_scene: H and W must be at least 16");
    SplitMix64 rng(derive_seed(seed, 0x5CE7E));
    constexpr std::size_t kOctaves = 4, kBase = 3;
    std::vector<detail::ValueNoise> colour[3], depth_noise;
    for (auto& ch : colour)
        for (std::size_t o = 0, cells = kBase; o < kOctaves; ++o, cells *= 2) ch.emplace_back(rng, cells, cells);
    depth_noise.emplace_back(rng, 2, 2);
    depth_noise.emplace_back(rng, 4, 4);

    std::array<double, 3> top{}, bottom{};
    for (std::size_t c = 0; c < 3; ++c) {
        top[c] = rng.uniform(0.45, 0.95);
        bottom[c] = rng.uniform(0.05, 0.55);
    }
    const double horizon = rng.uniform(0.3, 0.6);

    Scene<T> s{Tensor<T>(Shape{3, h, w}), Tensor<T>(Shape{1, h, w})};
    std::vector<double> depth(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = (y + 0.5) / h, u = (x + 0.5) / w;
            const double mix = std::clamp((v - horizon + 0.15) / 0.3, 0.0, 1.0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double base = top[c] * (1 - mix) + bottom[c] * mix;
                const double tex = detail::fractal(colour[c], u, v, kBase) - 0.5;
                s.clean[(c * h + y) * w + x] = static_cast<T>(std::clamp(base + 0.6 * tex, 0.0, 1.0));
            }
            const double n = detail::fractal(depth_noise, u, v, 2);
            depth[y * w + x] = std::clamp(0.75 * (1.0 - v) + 0.25 + 0.3 * (n - 0.5), 0.0, 1.0);
        }

    const std::size_t rects = 3 + rng.below(5);
    for (std::size_t r = 0; r < rects; ++r) {
        const std::size_t rw = 3 + rng.below(w / 3), rh = 3 + rng.below(h / 3);
        const std::size_t x0 = rng.below(w - rw), y0 = rng.below(h - rh);
        std::array<double, 3> col{rng.uniform(), rng.uniform(), rng.uniform()};
        const double d = rng.uniform(0.05, 0.6);
        for (std::size_t y = y0; y < y0 + rh; ++y)
            for (std::size_t x = x0; x < x0 + rw; ++x) {
                for (std::size_t c = 0; c < 3; ++c) s.clean[(c * h + y) * w + x] = static_cast<T>(col[c]);
                depth[y * w + x] = d;
            }
    }
    for (std::size_t i = 0; i < h * w; ++i) s.depth[i] = static_cast<T>(depth[i]);
    return s;
}

/// Airlight grey level in [0.7, 1.0] with a small per-channel tint; beta in [beta_lo, beta_hi].
inline HazeParams sample_haze_params(SplitMix64& rng, double beta_lo = 0.6, double beta_hi = 1.8) {
    HazeParams p;
    const double grey = rng.uniform(0.75, 0.95);
    for (auto& a : p.atmospheric_light) a = std::clamp(grey + rng.uniform(-0.05, 0.05), 0.7, 1.0);
    p.beta = rng.uniform(beta_lo, beta_hi);
    return p;
}

namespace detail {

// Geometric transform of a C x H x W tensor.
template <typename T>
Tensor<T> transform_planes(const Tensor<T>& in, Augment op) {
    if (op == Augment::none) return in;
    const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    const bool swap = op == Augment::rot90 || op == Augment::rot270;
    const std::size_t oh = swap ? w : h, ow = swap ? h : w;
    Tensor<T> out(Shape{c, oh, ow});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t si = 0, sj = 0;
                switch (op) {
                case Augment::rot90: si = j; sj = w - 1 - i; break; // counter-clockwise
                case Augment::rot180: si = h - 1 - i; sj = w - 1 - j; break;
                case Augment::rot270: si = h - 1 - j; sj = i; break;
                case Augment::hflip: si = i; sj = w - 1 - j; break;
                case Augment::none: break;
                }
                out[(ch * oh + i) * ow + j] = in[(ch * h + si) * w + sj];
            }
    return out;
}

template <typename T>
Tensor<T> crop_planes(const Tensor<T>& in, std::size_t y0, std::size_t x0, std::size_t size) {
    const std::size_t c = in.dim(0), h = in.dim(1), w = in.dim(2);
    (void)h;
    Tensor<T> out(Shape{c, size, size});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < size; ++i)
            std::copy_n(in.data().data() + (ch * in.dim(1) + y0 + i) * w + x0, size,
                        out.data().data() + (ch * size + i) * size);
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> augment_image(const Tensor<T>& img, Augment op) {
    return detail::transform_planes(img, op);
}

template <typename T>
HazyPair<T> augment(const HazyPair<T>& pair, Augment op) {
    return {detail::transform_planes(pair.hazy, op), detail::transform_planes(pair.clean, op),
            detail::transform_planes(pair.transmission, op), pair.params};
}

/// Seeded random square crops, congruent across hazy/clean/transmission.
template <typename T>
std::vector<HazyPair<T>> extract_patches(const HazyPair<T>& pair, std::size_t size, std::size_t count,
                                         std::uint64_t seed) {
    const std::size_t h = pair.hazy.dim(1), w = pair.hazy.dim(2);
    if (size == 0 || size > std::min(h, w))
        throw ArgumentError("extract_patches: patch size " + std::to_string(size) + " exceeds image " +
                            std::to_string(h) + "x" + std::to_string(w));
    if (size % 4 != 0) throw ArgumentError("extract_patches: patch size must be divisible by 4");
    SplitMix64 rng(seed);
    std::vector<HazyPair<T>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t y0 = rng.below(h - size + 1), x0 = rng.below(w - size + 1);
        out.push_back({detail::crop_planes(pair.hazy, y0, x0, size), detail::crop_planes(pair.clean, y0, x0, size),
                       detail::crop_planes(pair.transmission, y0, x0, size), pair.params});
    }
    return out;
}

/// `count` scenes of size x size with sampled haze, all derived from `seed`.
template <typename T = float>
std::vector<HazyPair<T>> synthesize_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
    std::vector<HazyPair<T>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        SplitMix64 rng(derive_seed(seed, 1000 + i));
        auto scene = generate_scene<T>(rng.next(), size, size);
        out.push_back(synthesize_hazy(scene, sample_haze_params(rng)));
    }
    return out;
}

} // namespace shan
