#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <vector>

#include "shan/error.hpp"
#include "shan/tensor.hpp"

namespace shan {

/// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
template <typename T>
double psnr(const Tensor<T>& x, const Tensor<T>& y, double peak = 1.0) {
    if (x.shape() != y.shape())
        throw ShapeError("psnr", "shape", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    double mse = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

struct SSIMOptions {
    std::size_t window = 11;
    double sigma = 1.5;
    double peak = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
    std::vector<double> g(size);
    const double c = (static_cast<double>(size) - 1) / 2;
    double s = 0;
    for (std::size_t i = 0; i < size; ++i) {
        g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
        s += g[i];
    }
    for (auto& v : g) v /= s;
    return g;
}

// Channel mean of a C x H x W (or 1 x C x H x W) image.
template <typename T>
std::vector<double> to_gray(const Tensor<T>& img, std::size_t& h, std::size_t& w) {
    const auto& s = img.shape();
    std::size_t c = 0;
    if (s.size() == 3) c = s[0], h = s[1], w = s[2];
    else if (s.size() == 4 && s[0] == 1) c = s[1], h = s[2], w = s[3];
    else if (s.size() == 2) c = 1, h = s[0], w = s[1];
    else throw ShapeError("ssim", "rank", "expected C x H x W image, got " + shape_str(s));
    std::vector<double> g(h * w, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i) g[i] += static_cast<double>(img[ch * h * w + i]);
    for (auto& v : g) v /= static_cast<double>(c);
    return g;
}

// Valid-mode separable filtering.
inline std::vector<double> filter_valid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                        const std::vector<double>& k) {
    const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(h * ow), out(oh * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += k[i] * src[y * w + x + i];
            tmp[y * ow + x] = s;
        }
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
            out[y * ow + x] = s;
        }
    return out;
}

} // namespace detail

/// Mean SSIM over all valid Gaussian windows of the channel-mean images.
template <typename T>
double ssim(const Tensor<T>& x, const Tensor<T>& y, const SSIMOptions& opt = {}) {
    if (x.shape() != y.shape())
        throw ShapeError("ssim", "shape", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    std::size_t h = 0, w = 0;
    auto gx = detail::to_gray(x, h, w);
    auto gy = detail::to_gray(y, h, w);
    if (h < opt.window || w < opt.window)
        throw ShapeError("ssim", "H/W", "image " + std::to_string(h) + "x" + std::to_string(w) +
                                            " is smaller than the " + std::to_string(opt.window) + "px window");
    const auto k = detail::gaussian_window(opt.window, opt.sigma);
    std::vector<double> xx(h * w), yy(h * w), xy(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        xx[i] = gx[i] * gx[i];
        yy[i] = gy[i] * gy[i];
        xy[i] = gx[i] * gy[i];
    }
    auto mx = detail::filter_valid(gx, h, w, k), my = detail::filter_valid(gy, h, w, k);
    auto sxx = detail::filter_valid(xx, h, w, k), syy = detail::filter_valid(yy, h, w, k);
    auto sxy = detail::filter_valid(xy, h, w, k);
    const double c1 = (0.01 * opt.peak) * (0.01 * opt.peak), c2 = (0.03 * opt.peak) * (0.03 * opt.peak);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mx.size());
}

/// Per-pixel mean absolute channel difference, scaled so the maximum is 1.
template <typename T>
Tensor<T> diff_map(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape() || a.rank() != 3)
        throw ShapeError("diff_map", "shape", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), hw = h * w;
    Tensor<T> out(Shape{1, h, w});
    for (std::size_t i = 0; i < hw; ++i) {
        double s = 0;
        for (std::size_t ch = 0; ch < c; ++ch)
            s += std::abs(static_cast<double>(a[ch * hw + i]) - static_cast<double>(b[ch * hw + i]));
        out[i] = static_cast<T>(s / static_cast<double>(c));
    }
    const T m = out.max_abs();
    if (m > T(0))
        for (auto& v : out.storage()) v /= m;
    return out;
}

/// Jet ramp: dark blue (0) -> blue -> cyan -> green -> yellow -> red (1).
/// Red never decreases with the input value.
inline std::array<double, 3> colorjet(double v) {
    auto clamp01 = [](double x) { return std::clamp(x, 0.0, 1.0); };
    const double r = v < 0.75 ? clamp01(1.5 - std::abs(4 * v - 3)) : 1.0;
    const double g = clamp01(1.5 - std::abs(4 * v - 2));
    const double b = clamp01(1.5 - std::abs(4 * v - 1));
    return {r, g, b};
}

/// Renders a 1 x H x W map in [0, 1] as a 3 x H x W image. Out-of-range
/// values are clamped; `warn` (if given) receives a message when that happens.
template <typename T>
Tensor<T> colorjet_render(const Tensor<T>& map, std::ostream* warn = &std::cerr) {
    const auto& s = map.shape();
    if (s.size() != 3 || s[0] != 1) throw ShapeError("colorjet_render", "C", "expected 1 x H x W map");
    const std::size_t hw = s[1] * s[2];
    Tensor<T> out(Shape{3, s[1], s[2]});
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        double v = map[i];
        if (!(v >= 0.0 && v <= 1.0)) {
            ++clamped;
            v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
        }
        const auto rgb = colorjet(v);
        for (std::size_t c = 0; c < 3; ++c) out[c * hw + i] = static_cast<T>(rgb[c]);
    }
    if (clamped && warn)
        *warn << "warning: colorjet_render clamped " << clamped << " value(s) outside [0,1]\n";
    return out;
}

} // namespace shan
