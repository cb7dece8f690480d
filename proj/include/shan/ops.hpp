#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shan/autodiff.hpp"
#include "shan/tensor.hpp"

namespace shan {

enum class PadMode { zero, reflect };
enum class PoolAxis { horizontal, vertical };
enum class PoolKind { avg, max };
enum class Activation { relu, relu6, elu, tanh, sigmoid };

struct PaddingSpec {
    PadMode mode = PadMode::zero;
    std::size_t width = 0;
};

namespace detail {

template <typename T>
void accumulate(const Var<T>& v, const Tensor<T>& g) {
    if (!v.requires_grad()) return;
    auto& buf = v.node()->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

inline void require_rank(const char* op, const Shape& s, std::size_t rank) {
    if (s.size() != rank)
        throw ShapeError(op, "rank", "expected " + std::to_string(rank) + " but input is " + shape_str(s));
}

// Maps a padded coordinate back into [0, n); -1 means "zero padding".
inline long pad_index(long i, long n, PadMode mode) {
    if (i >= 0 && i < n) return i;
    if (mode == PadMode::zero) return -1;
    if (i < 0) return -i;
    return 2 * (n - 1) - i;
}

inline std::array<std::size_t, 4> as4(const Shape& s) {
    std::array<std::size_t, 4> out{1, 1, 1, 1};
    std::size_t off = 4 - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) out[off + i] = s[i];
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with broadcasting (ranks up to 4, extents equal or 1).

namespace detail {

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (a.size() != b.size())
        throw ShapeError(op, "rank", shape_str(a) + " vs " + shape_str(b));
    if (a.size() > 4) throw ShapeError(op, "rank", "broadcasting supports rank <= 4");
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) out[i] = a[i];
        else if (a[i] == 1) out[i] = b[i];
        else
            throw ShapeError(op, "axis " + std::to_string(i),
                             "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    return out;
}

// Calls f(out_index, a_index, b_index) over the broadcast iteration space.
template <typename F>
void broadcast_for(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    auto o = as4(out), sa = as4(a), sb = as4(b);
    std::array<std::size_t, 4> stride_a{}, stride_b{};
    std::size_t ra = 1, rb = 1;
    for (int d = 3; d >= 0; --d) {
        stride_a[d] = sa[d] == 1 ? 0 : ra;
        stride_b[d] = sb[d] == 1 ? 0 : rb;
        ra *= sa[d];
        rb *= sb[d];
    }
    std::size_t oi = 0;
    for (std::size_t i0 = 0; i0 < o[0]; ++i0)
        for (std::size_t i1 = 0; i1 < o[1]; ++i1)
            for (std::size_t i2 = 0; i2 < o[2]; ++i2) {
                std::size_t base_a = i0 * stride_a[0] + i1 * stride_a[1] + i2 * stride_a[2];
                std::size_t base_b = i0 * stride_b[0] + i1 * stride_b[1] + i2 * stride_b[2];
                for (std::size_t i3 = 0; i3 < o[3]; ++i3, ++oi)
                    f(oi, base_a + i3 * stride_a[3], base_b + i3 * stride_b[3]);
            }
}

} // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.shape() == bv.shape()) {
        Tensor<T> out(av.shape());
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
        add_flops(out.numel());
        return record<T>("add", std::move(out), {a, b}, [a, b](Node<T>& self) {
            detail::accumulate(a, self.grad);
            detail::accumulate(b, self.grad);
        });
    }
    Shape os = detail::broadcast_shape("add", av.shape(), bv.shape());
    Tensor<T> out(os);
    detail::broadcast_for(os, av.shape(), bv.shape(),
                          [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; });
    add_flops(out.numel());
    return record<T>("add", std::move(out), {a, b}, [a, b, os](Node<T>& self) {
        Tensor<T> ga(a.shape()), gb(b.shape());
        detail::broadcast_for(os, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
            ga[i] += self.grad[o];
            gb[j] += self.grad[o];
        });
        detail::accumulate(a, ga);
        detail::accumulate(b, gb);
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.shape() == bv.shape()) {
        Tensor<T> out(av.shape());
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
        add_flops(out.numel());
        return record<T>("mul", std::move(out), {a, b}, [a, b](Node<T>& self) {
            const auto& g = self.grad;
            if (a.requires_grad()) {
                Tensor<T> ga(a.shape());
                for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * b.value()[i];
                detail::accumulate(a, ga);
            }
            if (b.requires_grad()) {
                Tensor<T> gb(b.shape());
                for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] = g[i] * a.value()[i];
                detail::accumulate(b, gb);
            }
        });
    }
    Shape os = detail::broadcast_shape("mul", av.shape(), bv.shape());
    Tensor<T> out(os);
    detail::broadcast_for(os, av.shape(), bv.shape(),
                          [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; });
    add_flops(out.numel());
    return record<T>("mul", std::move(out), {a, b}, [a, b, os](Node<T>& self) {
        Tensor<T> ga(a.shape()), gb(b.shape());
        const auto& avv = a.value();
        const auto& bvv = b.value();
        detail::broadcast_for(os, a.shape(), b.shape(), [&](std::size_t o, std::size_t i, std::size_t j) {
            ga[i] += self.grad[o] * bvv[j];
            gb[j] += self.grad[o] * avv[i];
        });
        detail::accumulate(a, ga);
        detail::accumulate(b, gb);
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.shape() != bv.shape())
        throw ShapeError("sub", "shape", shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor<T> out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    add_flops(out.numel());
    return record<T>("sub", std::move(out), {a, b}, [a, b](Node<T>& self) {
        detail::accumulate(a, self.grad);
        if (b.requires_grad()) {
            Tensor<T> gb(b.shape());
            for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] = -self.grad[i];
            detail::accumulate(b, gb);
        }
    });
}

// scale * x + shift
template <typename T>
Var<T> affine(const Var<T>& x, T scale, T shift) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = scale * xv[i] + shift;
    add_flops(out.numel());
    return record<T>("affine", std::move(out), {x}, [x, scale](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = scale * self.grad[i];
        detail::accumulate(x, g);
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    const auto& xv = x.value();
    add_flops(xv.numel());
    return record<T>("sum", Tensor<T>::scalar(xv.sum()), {x}, [x](Node<T>& self) {
        detail::accumulate(x, Tensor<T>(x.shape(), self.grad[0]));
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    const auto& xv = x.value();
    const T n = static_cast<T>(xv.numel());
    add_flops(xv.numel());
    return record<T>("mean", Tensor<T>::scalar(xv.sum() / n), {x}, [x, n](Node<T>& self) {
        detail::accumulate(x, Tensor<T>(x.shape(), self.grad[0] / n));
    });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
T activate(Activation kind, T v) {
    switch (kind) {
    case Activation::relu: return v > T(0) ? v : T(0);
    case Activation::relu6: return std::min(std::max(v, T(0)), T(6));
    case Activation::elu: return v >= T(0) ? v : std::expm1(v);
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid:
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        else {
            T e = std::exp(v);
            return e / (T(1) + e);
        }
    }
    throw ArgumentError("unknown activation");
}

inline const char* activation_name(Activation kind) {
    switch (kind) {
    case Activation::relu: return "relu";
    case Activation::relu6: return "relu6";
    case Activation::elu: return "elu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

// Derivative expressed through input x and output y.
template <typename T>
T activate_grad(Activation kind, T x, T y) {
    switch (kind) {
    case Activation::relu: return x > T(0) ? T(1) : T(0);
    case Activation::relu6: return (x > T(0) && x < T(6)) ? T(1) : T(0);
    case Activation::elu: return x >= T(0) ? T(1) : y + T(1);
    case Activation::tanh: return T(1) - y * y;
    case Activation::sigmoid: return y * (T(1) - y);
    }
    return T(0);
}

template <typename T>
Var<T> apply_activation(const Var<T>& x, Activation kind) {
    const auto& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = activate(kind, xv[i]);
    add_flops(out.numel());
    return record<T>(activation_name(kind), std::move(out), {x}, [x, kind](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = self.grad[i] * activate_grad(kind, x.value()[i], self.value[i]);
        detail::accumulate(x, g);
    });
}

template <typename T> Var<T> relu6(const Var<T>& x) { return apply_activation(x, Activation::relu6); }
template <typename T> Var<T> sigmoid(const Var<T>& x) { return apply_activation(x, Activation::sigmoid); }
template <typename T> Var<T> tanh(const Var<T>& x) { return apply_activation(x, Activation::tanh); }
template <typename T> Var<T> elu(const Var<T>& x) { return apply_activation(x, Activation::elu); }
template <typename T> Var<T> relu(const Var<T>& x) { return apply_activation(x, Activation::relu); }

// ---------------------------------------------------------------------------
// Convolution (cross-correlation) via im2col + GEMM.

struct Conv2dGeometry {
    std::size_t n, c_in, h, w;
    std::size_t c_out, kh, kw;
    std::size_t stride, pad_h, pad_w;
    std::size_t groups;
    PadMode mode;
    std::size_t h_out, w_out;
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// For every (kernel tap, output pixel) the flat input pixel index, or -1.
inline std::vector<long> im2col_index(const Conv2dGeometry& g) {
    const std::size_t p = g.h_out * g.w_out;
    std::vector<long> idx(g.kh * g.kw * p);
    for (std::size_t ki = 0; ki < g.kh; ++ki)
        for (std::size_t kj = 0; kj < g.kw; ++kj) {
            long* row = idx.data() + (ki * g.kw + kj) * p;
            for (std::size_t oh = 0; oh < g.h_out; ++oh) {
                long ih = pad_index(static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.pad_h),
                                    static_cast<long>(g.h), g.mode);
                for (std::size_t ow = 0; ow < g.w_out; ++ow) {
                    long iw = pad_index(static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.pad_w),
                                        static_cast<long>(g.w), g.mode);
                    row[oh * g.w_out + ow] = (ih < 0 || iw < 0) ? -1 : ih * static_cast<long>(g.w) + iw;
                }
            }
        }
    return idx;
}

inline bool is_pointwise(const Conv2dGeometry& g) {
    return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_h == 0 && g.pad_w == 0;
}

template <typename T>
void im2col(const T* img, std::size_t channels, const Conv2dGeometry& g, const std::vector<long>& idx,
            T* cols) {
    const std::size_t hw = g.h * g.w;
    const std::size_t taps = g.kh * g.kw;
    const std::size_t p = g.h_out * g.w_out;
    for (std::size_t c = 0; c < channels; ++c) {
        const T* src = img + c * hw;
        for (std::size_t t = 0; t < taps; ++t) {
            const long* ix = idx.data() + t * p;
            T* dst = cols + (c * taps + t) * p;
            for (std::size_t j = 0; j < p; ++j) dst[j] = ix[j] < 0 ? T(0) : src[ix[j]];
        }
    }
}

template <typename T>
void col2im(const T* cols, std::size_t channels, const Conv2dGeometry& g, const std::vector<long>& idx, T* img) {
    const std::size_t hw = g.h * g.w;
    const std::size_t taps = g.kh * g.kw;
    const std::size_t p = g.h_out * g.w_out;
    for (std::size_t c = 0; c < channels; ++c) {
        T* dst = img + c * hw;
        for (std::size_t t = 0; t < taps; ++t) {
            const long* ix = idx.data() + t * p;
            const T* src = cols + (c * taps + t) * p;
            for (std::size_t j = 0; j < p; ++j)
                if (ix[j] >= 0) dst[ix[j]] += src[j];
        }
    }
}

} // namespace detail

inline std::uint64_t conv_flops(const Conv2dGeometry& g) {
    return 2ULL * g.kh * g.kw * (g.c_in / g.groups) * g.c_out * g.h_out * g.w_out * g.n;
}

/// General 2-D cross-correlation with rectangular kernels and per-axis padding.
/// input N x Cin x H x W, weight Cout x Cin/groups x kh x kw, optional bias [Cout].
template <typename T>
Var<T> conv2d_ex(const Var<T>& input, const Var<T>& weight, const Var<T>* bias, std::size_t stride,
                 std::size_t pad_h, std::size_t pad_w, PadMode mode, std::size_t groups) {
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    detail::require_rank("conv2d", xs, 4);
    detail::require_rank("conv2d(weight)", ws, 4);
    if (groups == 0 || stride == 0) throw ArgumentError("conv2d: groups and stride must be >= 1");
    Conv2dGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, pad_h, pad_w, groups, mode, 0, 0};
    if (g.c_in % groups != 0)
        throw ShapeError("conv2d", "C_in", std::to_string(g.c_in) + " not divisible by groups " +
                                               std::to_string(groups));
    if (g.c_out % groups != 0)
        throw ShapeError("conv2d", "C_out", std::to_string(g.c_out) + " not divisible by groups " +
                                                std::to_string(groups));
    if (ws[1] != g.c_in / groups)
        throw ShapeError("conv2d", "C_in", "weight expects " + std::to_string(ws[1] * groups) +
                                               " input channels, input has " + std::to_string(g.c_in));
    if (bias && (bias->shape() != Shape{g.c_out}))
        throw ShapeError("conv2d", "C_out", "bias shape " + shape_str(bias->shape()) + " does not match " +
                                                std::to_string(g.c_out) + " output channels");
    if (mode == PadMode::reflect && (pad_h >= g.h || pad_w >= g.w))
        throw ShapeError("conv2d", "padding", "reflect padding width must be smaller than the spatial extent " +
                                                  shape_str(xs));
    if (g.h + 2 * pad_h < g.kh) throw ShapeError("conv2d", "H", "padded height smaller than kernel");
    if (g.w + 2 * pad_w < g.kw) throw ShapeError("conv2d", "W", "padded width smaller than kernel");
    g.h_out = (g.h + 2 * pad_h - g.kh) / stride + 1;
    g.w_out = (g.w + 2 * pad_w - g.kw) / stride + 1;

    const std::size_t cin_g = g.c_in / groups, cout_g = g.c_out / groups;
    const std::size_t k = cin_g * g.kh * g.kw;
    const std::size_t p = g.h_out * g.w_out;
    const bool pointwise = detail::is_pointwise(g);
    auto idx = pointwise ? std::vector<long>{} : detail::im2col_index(g);

    Tensor<T> out(Shape{g.n, g.c_out, g.h_out, g.w_out});
    std::vector<T> cols(pointwise ? 0 : k * p);
    const auto& xv = input.value();
    const auto& wv = weight.value();
    using Mat = detail::RowMat<T>;
    for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const T* img = xv.data().data() + (n * g.c_in + gi * cin_g) * g.h * g.w;
            const T* colp = img;
            if (!pointwise) {
                detail::im2col(img, cin_g, g, idx, cols.data());
                colp = cols.data();
            }
            Eigen::Map<const Mat> c(colp, k, p);
            Eigen::Map<const Mat> wm(wv.data().data() + gi * cout_g * k, cout_g, k);
            Eigen::Map<Mat> o(out.data().data() + (n * g.c_out + gi * cout_g) * p, cout_g, p);
            o.noalias() = wm * c;
        }
    if (bias) {
        const auto& bv = bias->value();
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t co = 0; co < g.c_out; ++co) {
                T* o = out.data().data() + (n * g.c_out + co) * p;
                for (std::size_t j = 0; j < p; ++j) o[j] += bv[co];
            }
    }
    add_flops(conv_flops(g));

    std::vector<Var<T>> inputs{input, weight};
    Var<T> b = bias ? *bias : Var<T>();
    if (bias) inputs.push_back(*bias);
    return record<T>("conv2d", std::move(out), inputs, [input, weight, b, g, idx, pointwise](Node<T>& self) {
        const std::size_t cin_g = g.c_in / g.groups, cout_g = g.c_out / g.groups;
        const std::size_t k = cin_g * g.kh * g.kw;
        const std::size_t p = g.h_out * g.w_out;
        const auto& gy = self.grad;
        const auto& xv = input.value();
        const auto& wv = weight.value();
        using Mat = detail::RowMat<T>;
        Tensor<T> gw(weight.shape());
        Tensor<T> gx;
        if (input.requires_grad()) gx = Tensor<T>(input.shape());
        std::vector<T> cols(pointwise ? 0 : k * p);
        std::vector<T> gcols(pointwise ? 0 : k * p);
        for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t gi = 0; gi < g.groups; ++gi) {
                Eigen::Map<const Mat> dy(gy.data().data() + (n * g.c_out + gi * cout_g) * p, cout_g, p);
                const T* img = xv.data().data() + (n * g.c_in + gi * cin_g) * g.h * g.w;
                if (weight.requires_grad()) {
                    const T* colp = img;
                    if (!pointwise) {
                        detail::im2col(img, cin_g, g, idx, cols.data());
                        colp = cols.data();
                    }
                    Eigen::Map<const Mat> c(colp, k, p);
                    Eigen::Map<Mat> dw(gw.data().data() + gi * cout_g * k, cout_g, k);
                    dw.noalias() += dy * c.transpose();
                }
                if (input.requires_grad()) {
                    Eigen::Map<const Mat> wm(wv.data().data() + gi * cout_g * k, cout_g, k);
                    T* dimg = gx.data().data() + (n * g.c_in + gi * cin_g) * g.h * g.w;
                    if (pointwise) {
                        Eigen::Map<Mat> dx(dimg, k, p);
                        dx.noalias() += wm.transpose() * dy;
                    } else {
                        Eigen::Map<Mat> dc(gcols.data(), k, p);
                        dc.noalias() = wm.transpose() * dy;
                        detail::col2im(gcols.data(), cin_g, g, idx, dimg);
                    }
                }
            }
        if (weight.requires_grad()) detail::accumulate(weight, gw);
        if (input.requires_grad()) detail::accumulate(input, gx);
        if (b.defined() && b.requires_grad()) {
            Tensor<T> gb(b.shape());
            for (std::size_t n = 0; n < g.n; ++n)
                for (std::size_t co = 0; co < g.c_out; ++co) {
                    const T* d = gy.data().data() + (n * g.c_out + co) * p;
                    T s = 0;
                    for (std::size_t j = 0; j < p; ++j) s += d[j];
                    gb[co] += s;
                }
            detail::accumulate(b, gb);
        }
    });
}

/// Square-kernel convolution with symmetric padding.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>* bias, std::size_t stride,
              PaddingSpec padding, std::size_t groups = 1) {
    detail::require_rank("conv2d(weight)", weight.shape(), 4);
    if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d", "kernel", "must be square");
    return conv2d_ex(input, weight, bias, stride, padding.width, padding.width, padding.mode, groups);
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Var<T> reshape(const Var<T>& x, Shape s) {
    Tensor<T> out = x.value().reshaped(std::move(s));
    return record<T>("reshape", std::move(out), {x}, [x](Node<T>& self) {
        detail::accumulate(x, self.grad.reshaped(x.shape()));
    });
}

namespace detail {
// (outer, axis, inner) decomposition of a shape around one axis.
inline std::array<std::size_t, 3> split_axis(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}
} // namespace detail

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ArgumentError("concat: no inputs");
    Shape s = parts[0].shape();
    if (axis >= s.size()) throw ShapeError("concat", "axis", "out of range for " + shape_str(s));
    std::size_t total = 0;
    for (const auto& p : parts) {
        const auto& ps = p.shape();
        if (ps.size() != s.size()) throw ShapeError("concat", "rank", shape_str(ps) + " vs " + shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && ps[i] != s[i])
                throw ShapeError("concat", "axis " + std::to_string(i), shape_str(ps) + " vs " + shape_str(s));
        total += ps[axis];
    }
    s[axis] = total;
    Tensor<T> out(s);
    auto [outer, _, inner] = detail::split_axis(s, axis);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::size_t len = p.dim(axis);
        const auto& pv = p.value();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.data().data() + o * len * inner, len * inner,
                        out.data().data() + (o * total + offset) * inner);
        offset += len;
    }
    return record<T>("concat", std::move(out), parts, [parts, axis, total, outer, inner](Node<T>& self) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            std::size_t len = p.dim(axis);
            if (p.requires_grad()) {
                Tensor<T> g(p.shape());
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(self.grad.data().data() + (o * total + offset) * inner, len * inner,
                                g.data().data() + o * len * inner);
                detail::accumulate(p, g);
            }
            offset += len;
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
    Shape s = x.shape();
    if (axis >= s.size()) throw ShapeError("slice", "axis", "out of range for " + shape_str(s));
    if (length == 0 || start + length > s[axis])
        throw ShapeError("slice", "axis " + std::to_string(axis), "range out of bounds for " + shape_str(s));
    auto [outer, full, inner] = detail::split_axis(s, axis);
    s[axis] = length;
    Tensor<T> out(s);
    const auto& xv = x.value();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xv.data().data() + (o * full + start) * inner, length * inner,
                    out.data().data() + o * length * inner);
    return record<T>("slice", std::move(out), {x}, [x, outer, full, inner, start, length](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(self.grad.data().data() + o * length * inner, length * inner,
                        g.data().data() + (o * full + start) * inner);
        detail::accumulate(x, g);
    });
}

/// Permutes channels (axis 1): the channel at g*(C/groups)+i moves to i*groups+g.
template <typename T>
Var<T> channel_shuffle(const Var<T>& x, std::size_t groups) {
    const auto& s = x.shape();
    if (s.size() < 2) throw ShapeError("channel_shuffle", "rank", "needs at least N x C, got " + shape_str(s));
    const std::size_t c = s[1];
    if (groups == 0 || c % groups != 0)
        throw ShapeError("channel_shuffle", "C",
                         std::to_string(c) + " not divisible by groups " + std::to_string(groups));
    auto [n, _, inner] = detail::split_axis(s, 1);
    const std::size_t per = c / groups;
    // dst[i*groups+g] = src[g*per+i]
    std::vector<std::size_t> src_of(c);
    for (std::size_t gi = 0; gi < groups; ++gi)
        for (std::size_t i = 0; i < per; ++i) src_of[i * groups + gi] = gi * per + i;
    Tensor<T> out(s);
    const auto& xv = x.value();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t d = 0; d < c; ++d)
            std::copy_n(xv.data().data() + (b * c + src_of[d]) * inner, inner,
                        out.data().data() + (b * c + d) * inner);
    return record<T>("channel_shuffle", std::move(out), {x}, [x, src_of, n, c, inner](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t d = 0; d < c; ++d)
                std::copy_n(self.grad.data().data() + (b * c + d) * inner, inner,
                            g.data().data() + (b * c + src_of[d]) * inner);
        detail::accumulate(x, g);
    });
}

// ---------------------------------------------------------------------------
// Pooling and normalization

/// Horizontal: reduce across width, N x C x H. Vertical: reduce across height, N x C x W.
template <typename T>
Var<T> directional_pool(const Var<T>& x, PoolAxis axis, PoolKind kind) {
    detail::require_rank("directional_pool", x.shape(), 4);
    if (axis != PoolAxis::horizontal && axis != PoolAxis::vertical)
        throw ArgumentError("directional_pool: unknown axis");
    if (kind != PoolKind::avg && kind != PoolKind::max) throw ArgumentError("directional_pool: unknown kind");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const bool horiz = axis == PoolAxis::horizontal;
    const std::size_t len = horiz ? h : w;
    Tensor<T> out(Shape{n, c, len});
    std::vector<std::size_t> argmax(kind == PoolKind::max ? out.numel() : 0);
    const auto& xv = x.value();
    for (std::size_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data().data() + nc * h * w;
        for (std::size_t l = 0; l < len; ++l) {
            const std::size_t count = horiz ? w : h;
            const std::size_t step = horiz ? 1 : w;
            const T* p = horiz ? plane + l * w : plane + l;
            std::size_t o = nc * len + l;
            if (kind == PoolKind::avg) {
                T s = 0;
                for (std::size_t i = 0; i < count; ++i) s += p[i * step];
                out[o] = s / static_cast<T>(count);
            } else {
                std::size_t best = 0;
                for (std::size_t i = 1; i < count; ++i)
                    if (p[i * step] > p[best * step]) best = i;
                out[o] = p[best * step];
                argmax[o] = (p - plane) + best * step;
            }
        }
    }
    add_flops(xv.numel());
    const char* name = kind == PoolKind::avg ? "directional_avg_pool" : "directional_max_pool";
    return record<T>(name, std::move(out), {x}, [x, horiz, kind, argmax, n, c, h, w, len](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t nc = 0; nc < n * c; ++nc) {
            T* plane = g.data().data() + nc * h * w;
            for (std::size_t l = 0; l < len; ++l) {
                const std::size_t o = nc * len + l;
                const T go = self.grad[o];
                if (kind == PoolKind::max) {
                    plane[argmax[o]] += go;
                    continue;
                }
                const std::size_t count = horiz ? w : h;
                const T share = go / static_cast<T>(count);
                for (std::size_t i = 0; i < count; ++i) {
                    if (horiz) plane[l * w + i] += share;
                    else plane[i * w + l] += share;
                }
            }
        }
        detail::accumulate(x, g);
    });
}

/// N x C x H x W -> N x C x 1 x 1.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    detail::require_rank("global_avg_pool", x.shape(), 4);
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{n, c, 1, 1});
    const auto& xv = x.value();
    for (std::size_t i = 0; i < n * c; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
        out[i] = s / static_cast<T>(hw);
    }
    add_flops(xv.numel());
    return record<T>("global_avg_pool", std::move(out), {x}, [x, n, c, hw](Node<T>& self) {
        Tensor<T> g(x.shape());
        for (std::size_t i = 0; i < n * c; ++i) {
            T share = self.grad[i] / static_cast<T>(hw);
            for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] = share;
        }
        detail::accumulate(x, g);
    });
}

/// Per sample and channel: (x - mean) / sqrt(var + eps), biased variance, no affine.
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5)) {
    detail::require_rank("instance_norm", x.shape(), 4);
    const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
    const auto& xv = x.value();
    Tensor<T> out(x.shape());
    std::vector<T> inv_std(planes);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = xv.data().data() + p * hw;
        T m = 0;
        for (std::size_t j = 0; j < hw; ++j) m += src[j];
        m /= static_cast<T>(hw);
        T v = 0;
        for (std::size_t j = 0; j < hw; ++j) v += (src[j] - m) * (src[j] - m);
        v /= static_cast<T>(hw);
        inv_std[p] = T(1) / std::sqrt(v + eps);
        T* dst = out.data().data() + p * hw;
        for (std::size_t j = 0; j < hw; ++j) dst[j] = (src[j] - m) * inv_std[p];
    }
    add_flops(4ULL * xv.numel());
    return record<T>("instance_norm", std::move(out), {x}, [x, inv_std, planes, hw](Node<T>& self) {
        Tensor<T> g(x.shape());
        const auto& y = self.value;
        for (std::size_t p = 0; p < planes; ++p) {
            const T* gy = self.grad.data().data() + p * hw;
            const T* yp = y.data().data() + p * hw;
            T mean_g = 0, mean_gy = 0;
            for (std::size_t j = 0; j < hw; ++j) {
                mean_g += gy[j];
                mean_gy += gy[j] * yp[j];
            }
            mean_g /= static_cast<T>(hw);
            mean_gy /= static_cast<T>(hw);
            T* gx = g.data().data() + p * hw;
            for (std::size_t j = 0; j < hw; ++j) gx[j] = inv_std[p] * (gy[j] - mean_g - yp[j] * mean_gy);
        }
        detail::accumulate(x, g);
    });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t factor) {
    detail::require_rank("upsample_nearest", x.shape(), 4);
    if (factor == 0) throw ArgumentError("upsample_nearest: factor must be >= 1");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h * factor, wo = w * factor;
    Tensor<T> out(Shape{x.dim(0), x.dim(1), ho, wo});
    const auto& xv = x.value();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j)
                out[(p * ho + i) * wo + j] = xv[(p * h + i / factor) * w + j / factor];
    return record<T>("upsample_nearest", std::move(out), {x}, [x, planes, h, w, factor](Node<T>& self) {
        Tensor<T> g(x.shape());
        const std::size_t ho = h * factor, wo = w * factor;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    g[(p * h + i / factor) * w + j / factor] += self.grad[(p * ho + i) * wo + j];
        detail::accumulate(x, g);
    });
}

/// Numerically stable softmax along one axis.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
    const auto& s = x.shape();
    if (axis >= s.size()) throw ShapeError("softmax", "axis", "out of range for " + shape_str(s));
    auto [outer, len, inner] = detail::split_axis(s, axis);
    const auto& xv = x.value();
    Tensor<T> out(s);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * len * inner + i;
            T m = -std::numeric_limits<T>::infinity();
            for (std::size_t l = 0; l < len; ++l) m = std::max(m, xv[base + l * inner]);
            T z = 0;
            for (std::size_t l = 0; l < len; ++l) {
                T e = std::exp(xv[base + l * inner] - m);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
        }
    add_flops(3ULL * xv.numel());
    return record<T>("softmax", std::move(out), {x}, [x, outer, len, inner](Node<T>& self) {
        Tensor<T> g(x.shape());
        const auto& y = self.value;
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * len * inner + i;
                T dot = 0;
                for (std::size_t l = 0; l < len; ++l) dot += self.grad[base + l * inner] * y[base + l * inner];
                for (std::size_t l = 0; l < len; ++l)
                    g[base + l * inner] = y[base + l * inner] * (self.grad[base + l * inner] - dot);
            }
        detail::accumulate(x, g);
    });
}

/// Local attention aggregation:
///   out[n,c,y,x] = sum_j weights[n, head(c)*k*k + j, y, x] * values[n, c, y+dy_j, x+dx_j]
/// with zero padding and head(c) = c / (C / heads).
template <typename T>
Var<T> local_aggregate(const Var<T>& values, const Var<T>& weights, std::size_t kernel, std::size_t heads) {
    detail::require_rank("local_aggregate", values.shape(), 4);
    detail::require_rank("local_aggregate(weights)", weights.shape(), 4);
    const std::size_t n = values.dim(0), c = values.dim(1), h = values.dim(2), w = values.dim(3);
    const std::size_t taps = kernel * kernel;
    if (kernel % 2 == 0) throw ArgumentError("local_aggregate: kernel must be odd");
    if (heads == 0 || c % heads != 0)
        throw ShapeError("local_aggregate", "C", std::to_string(c) + " not divisible by heads");
    if (weights.shape() != Shape{n, heads * taps, h, w})
        throw ShapeError("local_aggregate", "weights", "expected " + shape_str(Shape{n, heads * taps, h, w}) +
                                                           " got " + shape_str(weights.shape()));
    const long r = static_cast<long>(kernel / 2);
    const std::size_t per_head = c / heads;
    const auto& vv = values.value();
    const auto& wv = weights.value();
    Tensor<T> out(values.shape());
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t head = ch / per_head;
            const T* vplane = vv.data().data() + (b * c + ch) * h * w;
            T* oplane = out.data().data() + (b * c + ch) * h * w;
            for (std::size_t t = 0; t < taps; ++t) {
                const long dy = static_cast<long>(t / kernel) - r, dx = static_cast<long>(t % kernel) - r;
                const T* wplane = wv.data().data() + (b * heads * taps + head * taps + t) * h * w;
                for (long y = 0; y < static_cast<long>(h); ++y) {
                    const long sy = y + dy;
                    if (sy < 0 || sy >= static_cast<long>(h)) continue;
                    for (long x = 0; x < static_cast<long>(w); ++x) {
                        const long sx = x + dx;
                        if (sx < 0 || sx >= static_cast<long>(w)) continue;
                        oplane[y * w + x] += wplane[y * w + x] * vplane[sy * w + sx];
                    }
                }
            }
        }
    add_flops(2ULL * taps * out.numel());
    return record<T>("local_aggregate", std::move(out), {values, weights},
                     [values, weights, kernel, heads, n, c, h, w](Node<T>& self) {
        const std::size_t taps = kernel * kernel;
        const long r = static_cast<long>(kernel / 2);
        const std::size_t per_head = c / heads;
        const auto& vv = values.value();
        const auto& wv = weights.value();
        Tensor<T> gv(values.shape()), gw(weights.shape());
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t head = ch / per_head;
                const T* vplane = vv.data().data() + (b * c + ch) * h * w;
                const T* gplane = self.grad.data().data() + (b * c + ch) * h * w;
                T* gvplane = gv.data().data() + (b * c + ch) * h * w;
                for (std::size_t t = 0; t < taps; ++t) {
                    const long dy = static_cast<long>(t / kernel) - r, dx = static_cast<long>(t % kernel) - r;
                    const std::size_t woff = (b * heads * taps + head * taps + t) * h * w;
                    const T* wplane = wv.data().data() + woff;
                    T* gwplane = gw.data().data() + woff;
                    for (long y = 0; y < static_cast<long>(h); ++y) {
                        const long sy = y + dy;
                        if (sy < 0 || sy >= static_cast<long>(h)) continue;
                        for (long x = 0; x < static_cast<long>(w); ++x) {
                            const long sx = x + dx;
                            if (sx < 0 || sx >= static_cast<long>(w)) continue;
                            const T go = gplane[y * w + x];
                            gwplane[y * w + x] += go * vplane[sy * w + sx];
                            gvplane[sy * w + sx] += go * wplane[y * w + x];
                        }
                    }
                }
            }
        detail::accumulate(values, gv);
        detail::accumulate(weights, gw);
    });
}

/// mean(sqrt((x - y)^2 + eps^2)) over every element.
template <typename T>
Var<T> charbonnier(const Var<T>& x, const Var<T>& y, T eps) {
    if (x.shape() != y.shape())
        throw ShapeError("charbonnier", "shape", shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    if (!(eps > T(0))) throw ArgumentError("charbonnier: eps must be positive");
    const auto& xv = x.value();
    const auto& yv = y.value();
    const std::size_t count = xv.numel();
    T acc = 0;
    for (std::size_t i = 0; i < count; ++i) {
        T d = xv[i] - yv[i];
        acc += std::sqrt(d * d + eps * eps);
    }
    add_flops(4ULL * count);
    return record<T>("charbonnier", Tensor<T>::scalar(acc / static_cast<T>(count)), {x, y},
                     [x, y, eps, count](Node<T>& self) {
        const T scale = self.grad[0] / static_cast<T>(count);
        Tensor<T> gx(x.shape());
        for (std::size_t i = 0; i < count; ++i) {
            T d = x.value()[i] - y.value()[i];
            gx[i] = scale * d / std::sqrt(d * d + eps * eps);
        }
        detail::accumulate(x, gx);
        if (y.requires_grad()) {
            for (auto& v : gx.storage()) v = -v;
            detail::accumulate(y, gx);
        }
    });
}

} // namespace shan
