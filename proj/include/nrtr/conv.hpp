#pragma once

#include "nrtr/tensor.hpp"

namespace nrtr {

namespace detail {

struct Conv3dDims {
    int batch, cin, in_d, in_h, in_w;
    int cout, kd, kh, kw;
    int out_d, out_h, out_w;
    std::int64_t patch;  // cin*kd*kh*kw
    std::int64_t positions;
};

template <typename T>
Conv3dDims conv3d_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int padding) {
    if (x.shape().size() != 5)
        throw ShapeError("conv3d: input must be rank 5 [batch, channel, d, h, w], got " +
                         shape_str(x.shape()));
    if (w.shape().size() != 5)
        throw ShapeError("conv3d: kernel must be rank 5 [cout, cin, kd, kh, kw], got " +
                         shape_str(w.shape()));
    if (stride < 1) throw ShapeError("conv3d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv3d: padding must be >= 0");
    Conv3dDims d;
    d.batch = x.shape()[0];
    d.cin = x.shape()[1];
    d.in_d = x.shape()[2];
    d.in_h = x.shape()[3];
    d.in_w = x.shape()[4];
    d.cout = w.shape()[0];
    d.kd = w.shape()[2];
    d.kh = w.shape()[3];
    d.kw = w.shape()[4];
    if (w.shape()[1] != d.cin)
        throw ShapeError("conv3d: kernel cin " + std::to_string(w.shape()[1]) +
                         " != input channels " + std::to_string(d.cin));
    auto out_extent = [&](int in, int k) {
        const int span = in + 2 * padding - k;
        if (span < 0) throw ShapeError("conv3d: kernel larger than padded input");
        return span / stride + 1;
    };
    d.out_d = out_extent(d.in_d, d.kd);
    d.out_h = out_extent(d.in_h, d.kh);
    d.out_w = out_extent(d.in_w, d.kw);
    d.patch = static_cast<std::int64_t>(d.cin) * d.kd * d.kh * d.kw;
    d.positions = static_cast<std::int64_t>(d.out_d) * d.out_h * d.out_w;
    return d;
}

/// Column c of `col` holds the receptive field of output position c
/// (zero-filled where the window leaves the input).
template <typename T>
void im2col(const T* x, const Conv3dDims& d, int stride, int padding, T* col) {
    parallel_for(d.positions, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t c = lo; c < hi; ++c) {
            const int ow = static_cast<int>(c % d.out_w);
            const int oh = static_cast<int>((c / d.out_w) % d.out_h);
            const int od = static_cast<int>(c / (static_cast<std::int64_t>(d.out_w) * d.out_h));
            T* dst = col + c * d.patch;
            const int id0 = od * stride - padding;
            const int ih0 = oh * stride - padding;
            const int iw0 = ow * stride - padding;
            std::int64_t r = 0;
            for (int ci = 0; ci < d.cin; ++ci) {
                const T* xc = x + (static_cast<std::int64_t>(ci) * d.in_d) * d.in_h * d.in_w;
                for (int kz = 0; kz < d.kd; ++kz) {
                    const int id = id0 + kz;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int ih = ih0 + ky;
                        const bool row_ok = id >= 0 && id < d.in_d && ih >= 0 && ih < d.in_h;
                        const T* src =
                            row_ok ? xc + (static_cast<std::int64_t>(id) * d.in_h + ih) * d.in_w
                                   : nullptr;
                        for (int kx = 0; kx < d.kw; ++kx, ++r) {
                            const int iw = iw0 + kx;
                            dst[r] = (row_ok && iw >= 0 && iw < d.in_w) ? src[iw] : T(0);
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void col2im_add(const T* col, const Conv3dDims& d, int stride, int padding, T* dx) {
    for (std::int64_t c = 0; c < d.positions; ++c) {
        const int ow = static_cast<int>(c % d.out_w);
        const int oh = static_cast<int>((c / d.out_w) % d.out_h);
        const int od = static_cast<int>(c / (static_cast<std::int64_t>(d.out_w) * d.out_h));
        const T* src = col + c * d.patch;
        const int id0 = od * stride - padding;
        const int ih0 = oh * stride - padding;
        const int iw0 = ow * stride - padding;
        std::int64_t r = 0;
        for (int ci = 0; ci < d.cin; ++ci) {
            T* xc = dx + (static_cast<std::int64_t>(ci) * d.in_d) * d.in_h * d.in_w;
            for (int kz = 0; kz < d.kd; ++kz) {
                const int id = id0 + kz;
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int ih = ih0 + ky;
                    const bool row_ok = id >= 0 && id < d.in_d && ih >= 0 && ih < d.in_h;
                    T* dst =
                        row_ok ? xc + (static_cast<std::int64_t>(id) * d.in_h + ih) * d.in_w
                               : nullptr;
                    for (int kx = 0; kx < d.kw; ++kx, ++r) {
                        const int iw = iw0 + kx;
                        if (row_ok && iw >= 0 && iw < d.in_w) dst[iw] += src[r];
                    }
                }
            }
        }
    }
}

template <typename T>
using ColMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;
template <typename T>
using ConstColMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>>;

}  // namespace detail

/// 3D cross-correlation via im2col + GEMM (the default, blocked path).
/// Input [batch, cin, d, h, w], kernel [cout, cin, kd, kh, kw], one stride
/// and zero-padding value for all spatial axes.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int padding = 0) {
    const auto d = detail::conv3d_dims(x, w, stride, padding);
    typename Tensor<T>::Array out(static_cast<std::int64_t>(d.batch) * d.cout * d.positions);
    typename Tensor<T>::Array col(d.patch * d.positions);
    const std::int64_t x_item = static_cast<std::int64_t>(d.cin) * d.in_d * d.in_h * d.in_w;
    const std::int64_t y_item = static_cast<std::int64_t>(d.cout) * d.positions;
    detail::ConstMatMap<T> W(w.values().data(), d.cout, d.patch);
    for (int b = 0; b < d.batch; ++b) {
        detail::im2col(x.values().data() + b * x_item, d, stride, padding, col.data());
        detail::ConstColMap<T> C(col.data(), d.patch, d.positions);
        detail::MatMap<T>(out.data() + b * y_item, d.cout, d.positions).noalias() = W * C;
    }

    auto xn = x.node();
    auto wn = w.node();
    return detail::make_op<T>(
        {d.batch, d.cout, d.out_d, d.out_h, d.out_w}, std::move(out), {x, w},
        [xn, wn, d, stride, padding, x_item, y_item](TensorNode<T>& self) {
            typename Tensor<T>::Array col(d.patch * d.positions);
            typename Tensor<T>::Array dcol(d.patch * d.positions);
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            detail::ConstMatMap<T> W(wn->values.data(), d.cout, d.patch);
            for (int b = 0; b < d.batch; ++b) {
                detail::ConstMatMap<T> G(self.grad.data() + b * y_item, d.cout, d.positions);
                if (wn->requires_grad) {
                    detail::im2col(xn->values.data() + b * x_item, d, stride, padding, col.data());
                    detail::ConstColMap<T> C(col.data(), d.patch, d.positions);
                    detail::MatMap<T>(wn->grad.data(), d.cout, d.patch).noalias() +=
                        G * C.transpose();
                }
                if (xn->requires_grad) {
                    detail::ColMap<T> DC(dcol.data(), d.patch, d.positions);
                    DC.noalias() = W.transpose() * G;
                    detail::col2im_add(dcol.data(), d, stride, padding,
                                       xn->grad.data() + b * x_item);
                }
            }
        });
}

/// Reference 7-loop convolution; same contract as conv3d. The blocked path
/// must agree with this one within 1e-6.
template <typename T>
Tensor<T> conv3d_direct(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int padding = 0) {
    const auto d = detail::conv3d_dims(x, w, stride, padding);
    typename Tensor<T>::Array out(static_cast<std::int64_t>(d.batch) * d.cout * d.positions);
    const T* px = x.values().data();
    const T* pw = w.values().data();
    auto x_at = [&](int b, int ci, int id, int ih, int iw) -> T {
        if (id < 0 || id >= d.in_d || ih < 0 || ih >= d.in_h || iw < 0 || iw >= d.in_w)
            return T(0);
        return px[(((static_cast<std::int64_t>(b) * d.cin + ci) * d.in_d + id) * d.in_h + ih) *
                      d.in_w +
                  iw];
    };
    std::int64_t o = 0;
    for (int b = 0; b < d.batch; ++b)
        for (int co = 0; co < d.cout; ++co)
            for (int od = 0; od < d.out_d; ++od)
                for (int oh = 0; oh < d.out_h; ++oh)
                    for (int ow = 0; ow < d.out_w; ++ow, ++o) {
                        T acc = T(0);
                        for (int ci = 0; ci < d.cin; ++ci)
                            for (int kz = 0; kz < d.kd; ++kz)
                                for (int ky = 0; ky < d.kh; ++ky)
                                    for (int kx = 0; kx < d.kw; ++kx)
                                        acc += x_at(b, ci, od * stride - padding + kz,
                                                    oh * stride - padding + ky,
                                                    ow * stride - padding + kx) *
                                               pw[(((static_cast<std::int64_t>(co) * d.cin + ci) *
                                                        d.kd +
                                                    kz) *
                                                       d.kh +
                                                   ky) *
                                                      d.kw +
                                                  kx];
                        out[o] = acc;
                    }

    auto xn = x.node();
    auto wn = w.node();
    return detail::make_op<T>(
        {d.batch, d.cout, d.out_d, d.out_h, d.out_w}, std::move(out), {x, w},
        [xn, wn, d, stride, padding](TensorNode<T>& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            const T* g = self.grad.data();
            auto x_index = [&](int b, int ci, int id, int ih, int iw) -> std::int64_t {
                if (id < 0 || id >= d.in_d || ih < 0 || ih >= d.in_h || iw < 0 || iw >= d.in_w)
                    return -1;
                return (((static_cast<std::int64_t>(b) * d.cin + ci) * d.in_d + id) * d.in_h +
                        ih) *
                           d.in_w +
                       iw;
            };
            std::int64_t o = 0;
            for (int b = 0; b < d.batch; ++b)
                for (int co = 0; co < d.cout; ++co)
                    for (int od = 0; od < d.out_d; ++od)
                        for (int oh = 0; oh < d.out_h; ++oh)
                            for (int ow = 0; ow < d.out_w; ++ow, ++o) {
                                const T go = g[o];
                                for (int ci = 0; ci < d.cin; ++ci)
                                    for (int kz = 0; kz < d.kd; ++kz)
                                        for (int ky = 0; ky < d.kh; ++ky)
                                            for (int kx = 0; kx < d.kw; ++kx) {
                                                const std::int64_t xi =
                                                    x_index(b, ci, od * stride - padding + kz,
                                                            oh * stride - padding + ky,
                                                            ow * stride - padding + kx);
                                                const std::int64_t wi =
                                                    (((static_cast<std::int64_t>(co) * d.cin +
                                                       ci) *
                                                          d.kd +
                                                      kz) *
                                                         d.kh +
                                                     ky) *
                                                        d.kw +
                                                    kx;
                                                if (xi >= 0) {
                                                    if (wn->requires_grad)
                                                        wn->grad[wi] += go * xn->values[xi];
                                                    if (xn->requires_grad)
                                                        xn->grad[xi] += go * wn->values[wi];
                                                }
                                            }
                            }
        });
}

/// Adds a per-channel bias to a [batch, channels, ...] tensor.
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (x.shape().size() < 2 || bias.shape().size() != 1 || bias.shape()[0] != x.shape()[1])
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
    const std::int64_t batch = x.shape()[0];
    const std::int64_t ch = x.shape()[1];
    const std::int64_t inner = x.numel() / (batch * ch);
    typename Tensor<T>::Array out(x.numel());
    const T* px = x.values().data();
    const T* pb = bias.values().data();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < ch; ++c) {
            const std::int64_t base = (b * ch + c) * inner;
            for (std::int64_t i = 0; i < inner; ++i) out[base + i] = px[base + i] + pb[c];
        }
    auto xn = x.node();
    auto bn = bias.node();
    return detail::make_op<T>(x.shape(), std::move(out), {x, bias},
                              [xn, bn, batch, ch, inner](TensorNode<T>& self) {
                                  const T* g = self.grad.data();
                                  if (xn->requires_grad) {
                                      xn->ensure_grad();
                                      xn->grad += self.grad;
                                  }
                                  if (bn->requires_grad) {
                                      bn->ensure_grad();
                                      for (std::int64_t b = 0; b < batch; ++b)
                                          for (std::int64_t c = 0; c < ch; ++c) {
                                              const std::int64_t base = (b * ch + c) * inner;
                                              T acc = T(0);
                                              for (std::int64_t i = 0; i < inner; ++i)
                                                  acc += g[base + i];
                                              bn->grad[c] += acc;
                                          }
                                  }
                              });
}

/// Average pooling with window k and stride s; requires (extent - k) % s == 0.
template <typename T>
Tensor<T> avgpool3d(const Tensor<T>& x, int k, int s) {
    if (x.shape().size() != 5) throw ShapeError("avgpool3d: input must be rank 5");
    if (k < 1 || s < 1) throw ShapeError("avgpool3d: k and s must be >= 1");
    const int B = x.shape()[0], C = x.shape()[1];
    const int D = x.shape()[2], H = x.shape()[3], W = x.shape()[4];
    for (int extent : {D, H, W})
        if (extent < k || (extent - k) % s != 0)
            throw ShapeError("avgpool3d: window does not tile " + shape_str(x.shape()));
    const int Do = (D - k) / s + 1, Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
    const T inv = T(1) / static_cast<T>(k * k * k);
    typename Tensor<T>::Array out(static_cast<std::int64_t>(B) * C * Do * Ho * Wo);
    const T* px = x.values().data();
    std::int64_t o = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* plane = px + (static_cast<std::int64_t>(b) * C + c) * D * H * W;
            for (int od = 0; od < Do; ++od)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow, ++o) {
                        T acc = T(0);
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    acc += plane[(static_cast<std::int64_t>(od * s + kz) * H +
                                                  (oh * s + ky)) *
                                                     W +
                                                 (ow * s + kx)];
                        out[o] = acc * inv;
                    }
        }
    auto xn = x.node();
    return detail::make_op<T>(
        {B, C, Do, Ho, Wo}, std::move(out), {x},
        [xn, B, C, D, H, W, Do, Ho, Wo, k, s, inv](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = self.grad.data();
            std::int64_t o = 0;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    T* plane = xn->grad.data() + (static_cast<std::int64_t>(b) * C + c) * D * H * W;
                    for (int od = 0; od < Do; ++od)
                        for (int oh = 0; oh < Ho; ++oh)
                            for (int ow = 0; ow < Wo; ++ow, ++o) {
                                const T go = g[o] * inv;
                                for (int kz = 0; kz < k; ++kz)
                                    for (int ky = 0; ky < k; ++ky)
                                        for (int kx = 0; kx < k; ++kx)
                                            plane[(static_cast<std::int64_t>(od * s + kz) * H +
                                                   (oh * s + ky)) *
                                                      W +
                                                  (ow * s + kx)] += go;
                            }
                }
        });
}

/// Nearest-neighbor upsampling by an integer factor on the spatial axes.
template <typename T>
Tensor<T> upsample_nearest3d(const Tensor<T>& x, int factor) {
    if (x.shape().size() != 5) throw ShapeError("upsample_nearest3d: input must be rank 5");
    if (factor < 1) throw ShapeError("upsample_nearest3d: factor must be >= 1");
    const int B = x.shape()[0], C = x.shape()[1];
    const int D = x.shape()[2], H = x.shape()[3], W = x.shape()[4];
    const int Do = D * factor, Ho = H * factor, Wo = W * factor;
    typename Tensor<T>::Array out(static_cast<std::int64_t>(B) * C * Do * Ho * Wo);
    const T* px = x.values().data();
    std::int64_t o = 0;
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const T* plane = px + (static_cast<std::int64_t>(b) * C + c) * D * H * W;
            for (int z = 0; z < Do; ++z)
                for (int y = 0; y < Ho; ++y)
                    for (int xx = 0; xx < Wo; ++xx, ++o)
                        out[o] = plane[(static_cast<std::int64_t>(z / factor) * H + y / factor) *
                                           W +
                                       xx / factor];
        }
    auto xn = x.node();
    return detail::make_op<T>(
        {B, C, Do, Ho, Wo}, std::move(out), {x},
        [xn, B, C, D, H, W, Do, Ho, Wo, factor](TensorNode<T>& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const T* g = self.grad.data();
            std::int64_t o = 0;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    T* plane = xn->grad.data() + (static_cast<std::int64_t>(b) * C + c) * D * H * W;
                    for (int z = 0; z < Do; ++z)
                        for (int y = 0; y < Ho; ++y)
                            for (int xx = 0; xx < Wo; ++xx, ++o)
                                plane[(static_cast<std::int64_t>(z / factor) * H + y / factor) * W +
                                      xx / factor] += g[o];
                }
        });
}

}  // namespace nrtr
