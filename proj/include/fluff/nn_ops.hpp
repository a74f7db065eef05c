#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <type_traits>
#include <vector>

#include "fluff/tensor.hpp"

namespace fluff {

/// Kernel thread count. Parallel sections partition disjoint output regions
/// only, so results are bit-identical to the sequential loop nest for any
/// setting.
void set_num_threads(int n);
int get_num_threads();

/// Runs fn(begin, end) over [0, total) in contiguous chunks, possibly on
/// worker threads. fn must only write state owned by its index range.
void parallel_for(std::size_t total, const std::function<void(std::size_t, std::size_t)>& fn);

/// 2-D convolution parameters. The bias tensor is shaped (1, out_c, 1, 1) so
/// parameters serialize uniformly; logically it is a length-out_c vector.
template <typename T>
struct ConvLayerT {
    TensorT<T> weight; // (out_c, in_c, kh, kw)
    TensorT<T> bias;   // (1, out_c, 1, 1)
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    int out_channels() const { return weight.batch(); }
    int in_channels() const { return weight.channels(); }
    int kernel_h() const { return weight.height(); }
    int kernel_w() const { return weight.width(); }

    void validate() const {
        if (stride < 1) throw std::invalid_argument("conv stride must be >= 1");
        if (dilation < 1) throw std::invalid_argument("conv dilation must be >= 1");
        if (padding < 0) throw std::invalid_argument("conv padding must be >= 0");
        if (bias.channels() != out_channels() || bias.size() != static_cast<std::size_t>(out_channels())) {
            throw std::invalid_argument("conv bias length must equal out_channels");
        }
    }
};

using ConvLayer = ConvLayerT<float>;

inline int conv_output_dim(int in, int k, int stride, int padding, int dilation) {
    const int effective = dilation * (k - 1) + 1;
    const int num = in + 2 * padding - effective;
    if (num < 0) {
        throw std::invalid_argument("convolution output size is negative (input " + std::to_string(in) +
                                    ", effective kernel " + std::to_string(effective) + ", padding " +
                                    std::to_string(padding) + ")");
    }
    return num / stride + 1;
}

/// Effective spatial extent of a dilated kernel: k + (k-1)(d-1).
inline int effective_extent(int k, int dilation) { return (k - 1) * dilation + 1; }

namespace detail {

// Accumulations run in double regardless of storage type.
template <typename T>
using Acc = double;

/// Lowers one batch item to a column matrix, layout col[n*K + k] with
/// n = oh*out_w + ow and k = (ic*kh + r)*kw + s, matching the row-major
/// weight layout so a straight dot product reproduces the naive
/// ic -> kh -> kw reduction order.
template <typename T>
void im2col(const TensorT<T>& x, int b, int kh, int kw, int stride, int padding, int dilation,
            int out_h, int out_w, T* col) {
    const int in_c = x.channels();
    const int in_h = x.height();
    const int in_w = x.width();
    const T* src = x.data() + static_cast<std::size_t>(b) * in_c * in_h * in_w;
    const std::size_t K = static_cast<std::size_t>(in_c) * kh * kw;
    for (int oh = 0; oh < out_h; ++oh) {
        for (int ow = 0; ow < out_w; ++ow) {
            T* dst = col + (static_cast<std::size_t>(oh) * out_w + ow) * K;
            for (int ic = 0; ic < in_c; ++ic) {
                const T* plane = src + static_cast<std::size_t>(ic) * in_h * in_w;
                for (int r = 0; r < kh; ++r) {
                    const int ih = oh * stride - padding + r * dilation;
                    for (int s = 0; s < kw; ++s) {
                        const int iw = ow * stride - padding + s * dilation;
                        *dst++ = (ih >= 0 && ih < in_h && iw >= 0 && iw < in_w)
                                     ? plane[static_cast<std::size_t>(ih) * in_w + iw]
                                     : T(0);
                    }
                }
            }
        }
    }
}

} // namespace detail

/// Dilated 2-D convolution. Every output element is a double-accumulated dot
/// product over (in_c, kh, kw) in that fixed order plus bias, identical to the
/// naive six-loop nest bit for bit.
template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvLayerT<T>& p) {
    p.validate();
    if (x.channels() != p.in_channels()) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.channels()) +
                                    " channels, layer expects " + std::to_string(p.in_channels()));
    }
    const int out_c = p.out_channels();
    const int kh = p.kernel_h();
    const int kw = p.kernel_w();
    const int out_h = conv_output_dim(x.height(), kh, p.stride, p.padding, p.dilation);
    const int out_w = conv_output_dim(x.width(), kw, p.stride, p.padding, p.dilation);
    TensorT<T> y(x.batch(), out_c, out_h, out_w);
    const std::size_t K = static_cast<std::size_t>(p.in_channels()) * kh * kw;
    const std::size_t N = static_cast<std::size_t>(out_h) * out_w;
    if (y.empty()) {
        return y;
    }

    const T* w = p.weight.data();
    const T* bias = p.bias.data();
    std::vector<T> colbuf;
    for (int b = 0; b < x.batch(); ++b) {
        colbuf.resize(N * K);
        detail::im2col(x, b, kh, kw, p.stride, p.padding, p.dilation, out_h, out_w, colbuf.data());
        const T* col = colbuf.data();
        T* out_b = y.data() + static_cast<std::size_t>(b) * out_c * N;
        parallel_for(N, [&](std::size_t n0, std::size_t n1) {
            constexpr int OCB = 8; // register-blocked over output channels
            for (std::size_t n = n0; n < n1; ++n) {
                const T* cn = col + n * K;
                int oc = 0;
                for (; oc + OCB <= out_c; oc += OCB) {
                    detail::Acc<T> acc[OCB] = {};
                    const T* wr = w + static_cast<std::size_t>(oc) * K;
                    for (std::size_t k = 0; k < K; ++k) {
                        const detail::Acc<T> cv = cn[k];
                        for (int j = 0; j < OCB; ++j) {
                            acc[j] += static_cast<detail::Acc<T>>(wr[j * K + k]) * cv;
                        }
                    }
                    for (int j = 0; j < OCB; ++j) {
                        out_b[static_cast<std::size_t>(oc + j) * N + n] =
                            static_cast<T>(acc[j] + static_cast<detail::Acc<T>>(bias[oc + j]));
                    }
                }
                for (; oc < out_c; ++oc) {
                    detail::Acc<T> acc = 0;
                    const T* wr = w + static_cast<std::size_t>(oc) * K;
                    for (std::size_t k = 0; k < K; ++k) {
                        acc += static_cast<detail::Acc<T>>(wr[k]) * static_cast<detail::Acc<T>>(cn[k]);
                    }
                    out_b[static_cast<std::size_t>(oc) * N + n] =
                        static_cast<T>(acc + static_cast<detail::Acc<T>>(bias[oc]));
                }
            }
        });
    }
    return y;
}

/// Backward pass. Returns grad wrt x; accumulates weight and bias grads into
/// the layer's grad buffers (allocated on demand).
template <typename T>
TensorT<T> conv2d_backward(const TensorT<T>& x, ConvLayerT<T>& p, const TensorT<T>& grad_out) {
    p.validate();
    if (x.channels() != p.in_channels()) {
        throw std::invalid_argument("conv2d_backward: channel mismatch");
    }
    const int out_c = p.out_channels();
    const int kh = p.kernel_h();
    const int kw = p.kernel_w();
    const int out_h = conv_output_dim(x.height(), kh, p.stride, p.padding, p.dilation);
    const int out_w = conv_output_dim(x.width(), kw, p.stride, p.padding, p.dilation);
    if (grad_out.batch() != x.batch() || grad_out.channels() != out_c || grad_out.height() != out_h ||
        grad_out.width() != out_w) {
        throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape_str() +
                                    " does not match forward output");
    }
    TensorT<T> grad_x(x.batch(), x.channels(), x.height(), x.width());
    T* wg = p.weight.grad();
    T* bg = p.bias.grad();
    const std::size_t K = static_cast<std::size_t>(p.in_channels()) * kh * kw;
    const std::size_t N = static_cast<std::size_t>(out_h) * out_w;
    if (grad_out.empty()) {
        return grad_x;
    }

    const T* w = p.weight.data();
    const std::size_t plane = static_cast<std::size_t>(x.channels()) * x.height() * x.width();
    std::vector<T> colbuf(N * K);
    std::vector<double> wacc(static_cast<std::size_t>(out_c) * K, 0.0);
    std::vector<double> bacc(static_cast<std::size_t>(out_c), 0.0);
    std::vector<double> gcol(K);
    std::vector<double> gx(plane);
    for (int b = 0; b < x.batch(); ++b) {
        detail::im2col(x, b, kh, kw, p.stride, p.padding, p.dilation, out_h, out_w, colbuf.data());
        const T* col = colbuf.data();
        const T* go_b = grad_out.data() + static_cast<std::size_t>(b) * out_c * N;
        std::fill(gx.begin(), gx.end(), 0.0);
        for (std::size_t n = 0; n < N; ++n) {
            std::fill(gcol.begin(), gcol.end(), 0.0);
            const T* cn = col + n * K;
            for (int oc = 0; oc < out_c; ++oc) {
                const double g = go_b[static_cast<std::size_t>(oc) * N + n];
                const T* wr = w + static_cast<std::size_t>(oc) * K;
                double* wa = wacc.data() + static_cast<std::size_t>(oc) * K;
                for (std::size_t k = 0; k < K; ++k) {
                    gcol[k] += g * static_cast<double>(wr[k]);
                    wa[k] += g * static_cast<double>(cn[k]);
                }
                bacc[static_cast<std::size_t>(oc)] += g;
            }
            // col2im scatter for this output position
            const int oh = static_cast<int>(n) / out_w;
            const int ow = static_cast<int>(n) % out_w;
            std::size_t k = 0;
            for (int ic = 0; ic < x.channels(); ++ic) {
                for (int r = 0; r < kh; ++r) {
                    const int ih = oh * p.stride - p.padding + r * p.dilation;
                    for (int s = 0; s < kw; ++s, ++k) {
                        const int iw = ow * p.stride - p.padding + s * p.dilation;
                        if (ih >= 0 && ih < x.height() && iw >= 0 && iw < x.width()) {
                            gx[(static_cast<std::size_t>(ic) * x.height() + ih) * x.width() + iw] += gcol[k];
                        }
                    }
                }
            }
        }
        T* gx_out = grad_x.data() + static_cast<std::size_t>(b) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            gx_out[i] = static_cast<T>(gx[i]);
        }
    }
    for (std::size_t i = 0; i < wacc.size(); ++i) {
        wg[i] += static_cast<T>(wacc[i]);
    }
    for (int oc = 0; oc < out_c; ++oc) {
        bg[oc] += static_cast<T>(bacc[static_cast<std::size_t>(oc)]);
    }
    return grad_x;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& x) {
    TensorT<T> y(x.batch(), x.channels(), x.height(), x.width());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    }
    return y;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& x, const TensorT<T>& grad_out) {
    if (!x.same_shape(grad_out)) {
        throw std::invalid_argument("relu_backward: shape mismatch");
    }
    TensorT<T> gx(x.batch(), x.channels(), x.height(), x.width());
    for (std::size_t i = 0; i < x.size(); ++i) {
        gx.data()[i] = x.data()[i] > T(0) ? grad_out.data()[i] : T(0);
    }
    return gx;
}

/// Channel concatenation in input order. Inputs must agree on batch, height,
/// width.
template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& xs) {
    if (xs.empty()) {
        throw std::invalid_argument("concat_channels: no inputs");
    }
    const TensorT<T>& first = *xs.front();
    int total_c = 0;
    for (const TensorT<T>* x : xs) {
        if (x->batch() != first.batch() || x->height() != first.height() || x->width() != first.width()) {
            throw std::invalid_argument("concat_channels: spatial/batch mismatch between " +
                                        first.shape_str() + " and " + x->shape_str());
        }
        total_c += x->channels();
    }
    TensorT<T> y(first.batch(), total_c, first.height(), first.width());
    const std::size_t hw = static_cast<std::size_t>(first.height()) * first.width();
    for (int b = 0; b < first.batch(); ++b) {
        std::size_t coff = 0;
        for (const TensorT<T>* x : xs) {
            const std::size_t block = static_cast<std::size_t>(x->channels()) * hw;
            std::memcpy(y.data() + (static_cast<std::size_t>(b) * total_c + coff) * hw,
                        x->data() + static_cast<std::size_t>(b) * block, block * sizeof(T));
            coff += x->channels();
        }
    }
    return y;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& xs) {
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(xs.size());
    for (const auto& x : xs) ptrs.push_back(&x);
    return concat_channels(ptrs);
}

template <typename T>
TensorT<T> channel_slice(const TensorT<T>& x, int c_begin, int count) {
    if (c_begin < 0 || count < 0 || c_begin + count > x.channels()) {
        throw std::invalid_argument("channel_slice: range out of bounds");
    }
    TensorT<T> y(x.batch(), count, x.height(), x.width());
    const std::size_t hw = static_cast<std::size_t>(x.height()) * x.width();
    for (int b = 0; b < x.batch(); ++b) {
        std::memcpy(y.data() + static_cast<std::size_t>(b) * count * hw,
                    x.data() + (static_cast<std::size_t>(b) * x.channels() + c_begin) * hw,
                    static_cast<std::size_t>(count) * hw * sizeof(T));
    }
    return y;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    }
    TensorT<T> y(a.batch(), a.channels(), a.height(), a.width());
    for (std::size_t i = 0; i < a.size(); ++i) {
        y.data()[i] = a.data()[i] + b.data()[i];
    }
    return y;
}

struct PoolParams {
    int window = 2;
    int stride = 1;
    int padding = 0;
};

/// Pool geometry that substitutes a 3x3 conv of the given dilation: stride 1,
/// window equal to the conv's effective extent, same-padding.
inline PoolParams pool_like_dilated3x3(int dilation) {
    PoolParams p;
    p.window = effective_extent(3, dilation);
    p.stride = 1;
    p.padding = (p.window - 1) / 2;
    return p;
}

template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& x, const PoolParams& p) {
    const int out_h = conv_output_dim(x.height(), p.window, p.stride, p.padding, 1);
    const int out_w = conv_output_dim(x.width(), p.window, p.stride, p.padding, 1);
    TensorT<T> y(x.batch(), x.channels(), out_h, out_w);
    for (int b = 0; b < x.batch(); ++b) {
        for (int c = 0; c < x.channels(); ++c) {
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow) {
                    T best = std::numeric_limits<T>::lowest();
                    bool seen = false;
                    for (int r = 0; r < p.window; ++r) {
                        const int ih = oh * p.stride - p.padding + r;
                        if (ih < 0 || ih >= x.height()) continue;
                        for (int s = 0; s < p.window; ++s) {
                            const int iw = ow * p.stride - p.padding + s;
                            if (iw < 0 || iw >= x.width()) continue;
                            const T v = x.at(b, c, ih, iw);
                            if (!seen || v > best) {
                                best = v;
                                seen = true;
                            }
                        }
                    }
                    y.at(b, c, oh, ow) = seen ? best : T(0);
                }
            }
        }
    }
    return y;
}

template <typename T>
TensorT<T> maxpool2d_backward(const TensorT<T>& x, const PoolParams& p, const TensorT<T>& grad_out) {
    const int out_h = conv_output_dim(x.height(), p.window, p.stride, p.padding, 1);
    const int out_w = conv_output_dim(x.width(), p.window, p.stride, p.padding, 1);
    if (grad_out.batch() != x.batch() || grad_out.channels() != x.channels() ||
        grad_out.height() != out_h || grad_out.width() != out_w) {
        throw std::invalid_argument("maxpool2d_backward: grad_out shape mismatch");
    }
    TensorT<T> gx(x.batch(), x.channels(), x.height(), x.width());
    for (int b = 0; b < x.batch(); ++b) {
        for (int c = 0; c < x.channels(); ++c) {
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow) {
                    // Recompute the argmax; first maximum in scan order wins.
                    T best = std::numeric_limits<T>::lowest();
                    int bh = -1;
                    int bw = -1;
                    for (int r = 0; r < p.window; ++r) {
                        const int ih = oh * p.stride - p.padding + r;
                        if (ih < 0 || ih >= x.height()) continue;
                        for (int s = 0; s < p.window; ++s) {
                            const int iw = ow * p.stride - p.padding + s;
                            if (iw < 0 || iw >= x.width()) continue;
                            const T v = x.at(b, c, ih, iw);
                            if (bh < 0 || v > best) {
                                best = v;
                                bh = ih;
                                bw = iw;
                            }
                        }
                    }
                    if (bh >= 0) {
                        gx.at(b, c, bh, bw) += grad_out.at(b, c, oh, ow);
                    }
                }
            }
        }
    }
    return gx;
}

/// Average pooling; padded cells are excluded from the divisor.
template <typename T>
TensorT<T> avgpool2d_forward(const TensorT<T>& x, const PoolParams& p) {
    const int out_h = conv_output_dim(x.height(), p.window, p.stride, p.padding, 1);
    const int out_w = conv_output_dim(x.width(), p.window, p.stride, p.padding, 1);
    TensorT<T> y(x.batch(), x.channels(), out_h, out_w);
    for (int b = 0; b < x.batch(); ++b) {
        for (int c = 0; c < x.channels(); ++c) {
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow) {
                    double sum = 0.0;
                    int count = 0;
                    for (int r = 0; r < p.window; ++r) {
                        const int ih = oh * p.stride - p.padding + r;
                        if (ih < 0 || ih >= x.height()) continue;
                        for (int s = 0; s < p.window; ++s) {
                            const int iw = ow * p.stride - p.padding + s;
                            if (iw < 0 || iw >= x.width()) continue;
                            sum += static_cast<double>(x.at(b, c, ih, iw));
                            ++count;
                        }
                    }
                    y.at(b, c, oh, ow) = count > 0 ? static_cast<T>(sum / count) : T(0);
                }
            }
        }
    }
    return y;
}

template <typename T>
TensorT<T> avgpool2d_backward(const TensorT<T>& x, const PoolParams& p, const TensorT<T>& grad_out) {
    const int out_h = conv_output_dim(x.height(), p.window, p.stride, p.padding, 1);
    const int out_w = conv_output_dim(x.width(), p.window, p.stride, p.padding, 1);
    if (grad_out.batch() != x.batch() || grad_out.channels() != x.channels() ||
        grad_out.height() != out_h || grad_out.width() != out_w) {
        throw std::invalid_argument("avgpool2d_backward: grad_out shape mismatch");
    }
    TensorT<T> gx(x.batch(), x.channels(), x.height(), x.width());
    for (int b = 0; b < x.batch(); ++b) {
        for (int c = 0; c < x.channels(); ++c) {
            for (int oh = 0; oh < out_h; ++oh) {
                for (int ow = 0; ow < out_w; ++ow) {
                    int count = 0;
                    for (int r = 0; r < p.window; ++r) {
                        const int ih = oh * p.stride - p.padding + r;
                        if (ih < 0 || ih >= x.height()) continue;
                        for (int s = 0; s < p.window; ++s) {
                            const int iw = ow * p.stride - p.padding + s;
                            if (iw < 0 || iw >= x.width()) continue;
                            ++count;
                        }
                    }
                    if (count == 0) continue;
                    const T share = grad_out.at(b, c, oh, ow) / static_cast<T>(count);
                    for (int r = 0; r < p.window; ++r) {
                        const int ih = oh * p.stride - p.padding + r;
                        if (ih < 0 || ih >= x.height()) continue;
                        for (int s = 0; s < p.window; ++s) {
                            const int iw = ow * p.stride - p.padding + s;
                            if (iw < 0 || iw >= x.width()) continue;
                            gx.at(b, c, ih, iw) += share;
                        }
                    }
                }
            }
        }
    }
    return gx;
}

/// He-normal initialization for a conv layer; bias starts at zero.
template <typename T>
ConvLayerT<T> make_conv(int out_c, int in_c, int k, int stride, int padding, int dilation, Rng& rng) {
    ConvLayerT<T> layer;
    layer.weight = TensorT<T>(out_c, in_c, k, k);
    layer.bias = TensorT<T>(1, out_c, 1, 1);
    layer.stride = stride;
    layer.padding = padding;
    layer.dilation = dilation;
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    for (std::size_t i = 0; i < layer.weight.size(); ++i) {
        layer.weight.data()[i] = static_cast<T>(rng.normal() * stddev);
    }
    return layer;
}

} // namespace fluff
