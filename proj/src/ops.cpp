#include "seam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "seam/autograd.hpp"

namespace seam::ops {

namespace {

template <typename T>
struct Traits;
template <>
struct Traits<float> {
    static constexpr DType dt = DType::f32;
    static std::vector<float>& buf(detail::Storage& s) { return s.f32; }
    static std::span<const float> data(const Tensor& t) { return t.f32(); }
};
template <>
struct Traits<double> {
    static constexpr DType dt = DType::f64;
    static std::vector<double>& buf(detail::Storage& s) { return s.f64; }
    static std::span<const double> data(const Tensor& t) { return t.f64(); }
};

template <typename T>
detail::Storage storage_of(std::vector<T> v) {
    detail::Storage s;
    Traits<T>::buf(s) = std::move(v);
    return s;
}

/// Mutable gradient buffer of t, allocated (zeroed) on first use.
template <typename T>
std::span<T> grad_buf(const Tensor& t) {
    auto& impl = *t.impl();
    auto& buf = Traits<T>::buf(impl.grad);
    if (buf.empty()) {
        buf.assign(static_cast<std::size_t>(t.size()), T(0));
    }
    return buf;
}

template <typename T>
std::span<const T> out_grad(const Tensor& out) {
    return Traits<T>::buf(out.impl()->grad);
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw DTypeError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " and " +
                         dtype_name(b.dtype()));
    }
}

/// C[m,n] += / = A[m,k] * B[k,n], all row-major. j-contiguous inner loop.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            if (av == T(0)) {
                continue;
            }
            const T* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// matmul

namespace {

template <typename T>
Tensor matmul_impl(const Tensor& a, const Tensor& b) {
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
    gemm<T>(Traits<T>::data(a).data(), Traits<T>::data(b).data(), out.data(), m, k, n);

    return autograd::make_output(
        Shape{m, n}, Traits<T>::dt, storage_of(std::move(out)), "matmul", {a, b},
        [a, b, m, k, n](const Tensor& o) {
            const auto g = out_grad<T>(o);
            const auto av = Traits<T>::data(a);
            const auto bv = Traits<T>::data(b);
            if (a.requires_grad()) {
                auto da = grad_buf<T>(a); // dA[i,kk] += sum_j g[i,j] * B[kk,j]
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        T acc(0);
                        const T* grow = g.data() + i * n;
                        const T* brow = bv.data() + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) {
                            acc += grow[j] * brow[j];
                        }
                        da[static_cast<std::size_t>(i * k + kk)] += acc;
                    }
                }
            }
            if (b.requires_grad()) {
                auto db = grad_buf<T>(b); // dB[kk,j] += sum_i A[i,kk] * g[i,j]
                for (std::int64_t i = 0; i < m; ++i) {
                    const T* grow = g.data() + i * n;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const T av_ik = av[static_cast<std::size_t>(i * k + kk)];
                        if (av_ik == T(0)) {
                            continue;
                        }
                        T* dbrow = db.data() + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) {
                            dbrow[j] += av_ik * grow[j];
                        }
                    }
                }
            }
        });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "matmul");
    if (a.shape().size() != 2 || b.shape().size() != 2) {
        throw ShapeError("matmul: expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    if (a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    return a.dtype() == DType::f32 ? matmul_impl<float>(a, b) : matmul_impl<double>(a, b);
}

// ---------------------------------------------------------------------------
// linear: y = x.w^T + bias, weight stored [out,in]

namespace {

template <typename T>
Tensor linear_impl(const Tensor& x, const Tensor& w, const Tensor& bias) {
    const auto batch = x.shape()[0], in = x.shape()[1], out_n = w.shape()[0];
    const auto xv = Traits<T>::data(x);
    const auto wv = Traits<T>::data(w);
    std::vector<T> out(static_cast<std::size_t>(batch * out_n), T(0));
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* xrow = xv.data() + b * in;
        T* orow = out.data() + b * out_n;
        for (std::int64_t o = 0; o < out_n; ++o) {
            const T* wrow = wv.data() + o * in;
            T acc(0);
            for (std::int64_t i = 0; i < in; ++i) {
                acc += xrow[i] * wrow[i];
            }
            orow[o] = acc;
        }
    }
    if (bias.defined()) {
        const auto bv = Traits<T>::data(bias);
        for (std::int64_t b = 0; b < batch; ++b) {
            T* orow = out.data() + b * out_n;
            for (std::int64_t o = 0; o < out_n; ++o) {
                orow[o] += bv[static_cast<std::size_t>(o)];
            }
        }
    }

    std::vector<Tensor> inputs = bias.defined() ? std::vector<Tensor>{x, w, bias}
                                                : std::vector<Tensor>{x, w};
    return autograd::make_output(
        Shape{batch, out_n}, Traits<T>::dt, storage_of(std::move(out)), "linear", std::move(inputs),
        [x, w, bias, batch, in, out_n](const Tensor& o) {
            const auto g = out_grad<T>(o);
            const auto xv = Traits<T>::data(x);
            const auto wv = Traits<T>::data(w);
            if (x.requires_grad()) {
                auto dx = grad_buf<T>(x);
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* grow = g.data() + b * out_n;
                    T* dxrow = dx.data() + b * in;
                    for (std::int64_t o = 0; o < out_n; ++o) {
                        const T gv = grow[o];
                        if (gv == T(0)) {
                            continue;
                        }
                        const T* wrow = wv.data() + o * in;
                        for (std::int64_t i = 0; i < in; ++i) {
                            dxrow[i] += gv * wrow[i];
                        }
                    }
                }
            }
            if (w.requires_grad()) {
                auto dw = grad_buf<T>(w);
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* grow = g.data() + b * out_n;
                    const T* xrow = xv.data() + b * in;
                    for (std::int64_t o = 0; o < out_n; ++o) {
                        const T gv = grow[o];
                        if (gv == T(0)) {
                            continue;
                        }
                        T* dwrow = dw.data() + o * in;
                        for (std::int64_t i = 0; i < in; ++i) {
                            dwrow[i] += gv * xrow[i];
                        }
                    }
                }
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = grad_buf<T>(bias);
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* grow = g.data() + b * out_n;
                    for (std::int64_t o = 0; o < out_n; ++o) {
                        db[static_cast<std::size_t>(o)] += grow[o];
                    }
                }
            }
        });
}

} // namespace

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check_same_dtype(x, w, "linear");
    if (x.shape().size() != 2 || w.shape().size() != 2) {
        throw ShapeError("linear: expects rank-2 input and weight");
    }
    if (x.shape()[1] != w.shape()[1]) {
        throw ShapeError("linear: input width " + std::to_string(x.shape()[1]) +
                         " vs weight fan-in " + std::to_string(w.shape()[1]));
    }
    if (bias.defined()) {
        check_same_dtype(x, bias, "linear");
        if (bias.shape() != Shape{w.shape()[0]}) {
            throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
        }
    }
    return x.dtype() == DType::f32 ? linear_impl<float>(x, w, bias)
                                   : linear_impl<double>(x, w, bias);
}

// ---------------------------------------------------------------------------
// conv2d

namespace {

struct ConvDims {
    std::int64_t n, c, h, w;     // input
    std::int64_t f, kh, kw;      // kernels
    std::int64_t ho, wo;         // output
    int stride, pad;
    std::int64_t ckk() const { return c * kh * kw; }
    std::int64_t positions() const { return n * ho * wo; }
};

/// cols layout [CKK, N*Ho*Wo]: one row per kernel element, position-contiguous.
template <typename T>
std::vector<T> im2col(std::span<const T> x, const ConvDims& d) {
    std::vector<T> cols(static_cast<std::size_t>(d.ckk() * d.positions()), T(0));
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t ci = 0; ci < d.c; ++ci) {
            const T* xc = x.data() + (n * d.c + ci) * d.h * d.w;
            for (std::int64_t dy = 0; dy < d.kh; ++dy) {
                for (std::int64_t dx = 0; dx < d.kw; ++dx) {
                    const std::int64_t row = (ci * d.kh + dy) * d.kw + dx;
                    T* crow = cols.data() + row * d.positions() + n * d.ho * d.wo;
                    for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                        const std::int64_t iy = oy * d.stride - d.pad + dy;
                        if (iy < 0 || iy >= d.h) {
                            continue;
                        }
                        const T* xrow = xc + iy * d.w;
                        T* dst = crow + oy * d.wo;
                        for (std::int64_t ox = 0; ox < d.wo; ++ox) {
                            const std::int64_t ix = ox * d.stride - d.pad + dx;
                            if (ix >= 0 && ix < d.w) {
                                dst[ox] = xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return cols;
}

/// Scatter-add of dcols (same layout as im2col output) back onto dx.
template <typename T>
void col2im_add(const std::vector<T>& dcols, const ConvDims& d, std::span<T> dx) {
    for (std::int64_t n = 0; n < d.n; ++n) {
        for (std::int64_t ci = 0; ci < d.c; ++ci) {
            T* xc = dx.data() + (n * d.c + ci) * d.h * d.w;
            for (std::int64_t dy = 0; dy < d.kh; ++dy) {
                for (std::int64_t dx_ = 0; dx_ < d.kw; ++dx_) {
                    const std::int64_t row = (ci * d.kh + dy) * d.kw + dx_;
                    const T* crow = dcols.data() + row * d.positions() + n * d.ho * d.wo;
                    for (std::int64_t oy = 0; oy < d.ho; ++oy) {
                        const std::int64_t iy = oy * d.stride - d.pad + dy;
                        if (iy < 0 || iy >= d.h) {
                            continue;
                        }
                        T* xrow = xc + iy * d.w;
                        const T* src = crow + oy * d.wo;
                        for (std::int64_t ox = 0; ox < d.wo; ++ox) {
                            const std::int64_t ix = ox * d.stride - d.pad + dx_;
                            if (ix >= 0 && ix < d.w) {
                                xrow[ix] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor conv2d_impl(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvDims& d) {
    const auto xv = Traits<T>::data(x);
    const auto wv = Traits<T>::data(w);

    auto cols = im2col<T>(xv, d);

    // out2 [F, N*Ho*Wo] = w_mat [F, CKK] . cols [CKK, N*Ho*Wo]
    std::vector<T> out2(static_cast<std::size_t>(d.f * d.positions()), T(0));
    gemm<T>(wv.data(), cols.data(), out2.data(), d.f, d.ckk(), d.positions());

    // permute to [N, F, Ho, Wo] and add bias
    std::vector<T> out(static_cast<std::size_t>(d.positions() * d.f));
    const std::int64_t plane = d.ho * d.wo;
    for (std::int64_t f = 0; f < d.f; ++f) {
        const T bv = bias.defined() ? Traits<T>::data(bias)[static_cast<std::size_t>(f)] : T(0);
        for (std::int64_t n = 0; n < d.n; ++n) {
            const T* src = out2.data() + (f * d.n + n) * plane;
            T* dst = out.data() + (n * d.f + f) * plane;
            for (std::int64_t p = 0; p < plane; ++p) {
                dst[p] = src[p] + bv;
            }
        }
    }

    std::vector<Tensor> inputs = bias.defined() ? std::vector<Tensor>{x, w, bias}
                                                : std::vector<Tensor>{x, w};
    // cols is retained for the weight gradient; moved into the closure.
    return autograd::make_output(
        Shape{d.n, d.f, d.ho, d.wo}, Traits<T>::dt, storage_of(std::move(out)), "conv2d",
        std::move(inputs),
        [x, w, bias, d, cols = std::move(cols)](const Tensor& o) {
            const auto g = out_grad<T>(o);
            const std::int64_t plane = d.ho * d.wo;

            // dout2 [F, N*Ho*Wo]
            std::vector<T> dout2(static_cast<std::size_t>(d.f * d.positions()));
            for (std::int64_t n = 0; n < d.n; ++n) {
                for (std::int64_t f = 0; f < d.f; ++f) {
                    const T* src = g.data() + (n * d.f + f) * plane;
                    T* dst = dout2.data() + (f * d.n + n) * plane;
                    std::memcpy(dst, src, sizeof(T) * static_cast<std::size_t>(plane));
                }
            }

            if (w.requires_grad()) {
                auto dw = grad_buf<T>(w); // dW[f,c] += dot(dout2[f,:], cols[c,:])
                for (std::int64_t f = 0; f < d.f; ++f) {
                    const T* grow = dout2.data() + f * d.positions();
                    T* dwrow = dw.data() + f * d.ckk();
                    for (std::int64_t c = 0; c < d.ckk(); ++c) {
                        const T* crow = cols.data() + c * d.positions();
                        T acc(0);
                        for (std::int64_t r = 0; r < d.positions(); ++r) {
                            acc += grow[r] * crow[r];
                        }
                        dwrow[c] += acc;
                    }
                }
            }
            if (x.requires_grad()) {
                const auto wv = Traits<T>::data(w);
                std::vector<T> dcols(static_cast<std::size_t>(d.ckk() * d.positions()), T(0));
                // dcols [CKK, NHW] = w_mat^T [CKK, F] . dout2 [F, NHW]
                for (std::int64_t f = 0; f < d.f; ++f) {
                    const T* grow = dout2.data() + f * d.positions();
                    const T* wrow = wv.data() + f * d.ckk();
                    for (std::int64_t c = 0; c < d.ckk(); ++c) {
                        const T wv_fc = wrow[c];
                        if (wv_fc == T(0)) {
                            continue;
                        }
                        T* drow = dcols.data() + c * d.positions();
                        for (std::int64_t r = 0; r < d.positions(); ++r) {
                            drow[r] += wv_fc * grow[r];
                        }
                    }
                }
                col2im_add<T>(dcols, d, grad_buf<T>(x));
            }
            if (bias.defined() && bias.requires_grad()) {
                auto db = grad_buf<T>(bias);
                for (std::int64_t f = 0; f < d.f; ++f) {
                    const T* grow = dout2.data() + f * d.positions();
                    T acc(0);
                    for (std::int64_t r = 0; r < d.positions(); ++r) {
                        acc += grow[r];
                    }
                    db[static_cast<std::size_t>(f)] += acc;
                }
            }
        });
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    check_same_dtype(x, w, "conv2d");
    if (x.shape().size() != 4 || w.shape().size() != 4) {
        throw ShapeError("conv2d: expects x [N,C,H,W] and w [F,C,kh,kw]");
    }
    if (stride < 1) {
        throw ValidationError("conv2d: stride must be >= 1");
    }
    if (padding < 0) {
        throw ValidationError("conv2d: negative padding");
    }
    ConvDims d;
    d.n = x.shape()[0];
    d.c = x.shape()[1];
    d.h = x.shape()[2];
    d.w = x.shape()[3];
    d.f = w.shape()[0];
    d.kh = w.shape()[2];
    d.kw = w.shape()[3];
    d.stride = stride;
    d.pad = padding;
    if (w.shape()[1] != d.c) {
        throw ShapeError("conv2d: channel mismatch, input C=" + std::to_string(d.c) +
                         " kernel C=" + std::to_string(w.shape()[1]));
    }
    d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
    d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
    if (d.kh > d.h + 2 * padding || d.kw > d.w + 2 * padding || d.ho <= 0 || d.wo <= 0) {
        throw ShapeError("conv2d: degenerate output extent for input " + shape_str(x.shape()) +
                         " kernel " + shape_str(w.shape()));
    }
    if (bias.defined()) {
        check_same_dtype(x, bias, "conv2d");
        if (bias.shape() != Shape{d.f}) {
            throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
        }
    }
    return x.dtype() == DType::f32 ? conv2d_impl<float>(x, w, bias, d)
                                   : conv2d_impl<double>(x, w, bias, d);
}

// ---------------------------------------------------------------------------
// elementwise and shape ops

namespace {

template <typename T>
Tensor relu_impl(const Tensor& x) {
    const auto xv = Traits<T>::data(x);
    std::vector<T> out(xv.begin(), xv.end());
    for (auto& v : out) {
        if (!(v > T(0)) && !std::isnan(v)) { // NaN passes through to the finite check
            v = T(0);
        }
    }
    return autograd::make_output(
        x.shape(), Traits<T>::dt, storage_of(std::move(out)), "relu", {x}, [x](const Tensor& o) {
            if (!x.requires_grad()) {
                return;
            }
            const auto g = out_grad<T>(o);
            const auto xv = Traits<T>::data(x);
            auto dx = grad_buf<T>(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xv[i] > T(0)) {
                    dx[i] += g[i];
                }
            }
        });
}

template <typename T>
Tensor maxpool_impl(const Tensor& x, int k, int stride) {
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const std::int64_t ho = (h - k) / stride + 1;
    const std::int64_t wo = (w - k) / stride + 1;
    const auto xv = Traits<T>::data(x);
    std::vector<T> out(static_cast<std::size_t>(n * c * ho * wo));
    std::vector<std::int64_t> argmax(out.size());
    std::size_t oi = 0;
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
        const T* plane = xv.data() + nc * h * w;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox, ++oi) {
                T best = plane[(oy * stride) * w + ox * stride];
                std::int64_t best_idx = nc * h * w + (oy * stride) * w + ox * stride;
                for (std::int64_t dy = 0; dy < k; ++dy) {
                    for (std::int64_t dx = 0; dx < k; ++dx) {
                        const std::int64_t iy = oy * stride + dy, ix = ox * stride + dx;
                        const T v = plane[iy * w + ix];
                        if (v > best) {
                            best = v;
                            best_idx = nc * h * w + iy * w + ix;
                        }
                    }
                }
                out[oi] = best;
                argmax[oi] = best_idx;
            }
        }
    }
    return autograd::make_output(
        Shape{n, c, ho, wo}, Traits<T>::dt, storage_of(std::move(out)), "maxpool2d", {x},
        [x, argmax = std::move(argmax)](const Tensor& o) {
            if (!x.requires_grad()) {
                return;
            }
            const auto g = out_grad<T>(o);
            auto dx = grad_buf<T>(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                dx[static_cast<std::size_t>(argmax[i])] += g[i];
            }
        });
}

template <typename T>
Tensor dropout_impl(const Tensor& x, double p, Rng& rng) {
    const auto xv = Traits<T>::data(x);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    std::vector<T> mask(xv.size());
    for (auto& m : mask) {
        m = rng.uniform() >= p ? keep_scale : T(0);
    }
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * mask[i];
    }
    return autograd::make_output(
        x.shape(), Traits<T>::dt, storage_of(std::move(out)), "dropout", {x},
        [x, mask = std::move(mask)](const Tensor& o) {
            if (!x.requires_grad()) {
                return;
            }
            const auto g = out_grad<T>(o);
            auto dx = grad_buf<T>(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                dx[i] += g[i] * mask[i];
            }
        });
}

template <typename T>
Tensor add_impl(const Tensor& a, const Tensor& b, bool row_broadcast) {
    const auto av = Traits<T>::data(a);
    const auto bv = Traits<T>::data(b);
    std::vector<T> out(av.begin(), av.end());
    if (row_broadcast) {
        const std::size_t width = bv.size();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += bv[i % width];
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += bv[i];
        }
    }
    return autograd::make_output(
        a.shape(), Traits<T>::dt, storage_of(std::move(out)), "add", {a, b},
        [a, b, row_broadcast](const Tensor& o) {
            const auto g = out_grad<T>(o);
            if (a.requires_grad()) {
                auto da = grad_buf<T>(a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    da[i] += g[i];
                }
            }
            if (b.requires_grad()) {
                auto db = grad_buf<T>(b);
                if (row_broadcast) {
                    const std::size_t width = db.size();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        db[i % width] += g[i];
                    }
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        db[i] += g[i];
                    }
                }
            }
        });
}

template <typename T>
Tensor mul_impl(const Tensor& a, const Tensor& b) {
    const auto av = Traits<T>::data(a);
    const auto bv = Traits<T>::data(b);
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return autograd::make_output(
        a.shape(), Traits<T>::dt, storage_of(std::move(out)), "mul", {a, b},
        [a, b](const Tensor& o) {
            const auto g = out_grad<T>(o);
            if (a.requires_grad()) {
                const auto bv = Traits<T>::data(b);
                auto da = grad_buf<T>(a);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    da[i] += g[i] * bv[i];
                }
            }
            if (b.requires_grad()) {
                const auto av = Traits<T>::data(a);
                auto db = grad_buf<T>(b);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    db[i] += g[i] * av[i];
                }
            }
        });
}

template <typename T>
Tensor scale_impl(const Tensor& x, double c) {
    const auto xv = Traits<T>::data(x);
    const T cv = static_cast<T>(c);
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * cv;
    }
    return autograd::make_output(x.shape(), Traits<T>::dt, storage_of(std::move(out)), "scale",
                                 {x}, [x, cv](const Tensor& o) {
                                     if (!x.requires_grad()) {
                                         return;
                                     }
                                     const auto g = out_grad<T>(o);
                                     auto dx = grad_buf<T>(x);
                                     for (std::size_t i = 0; i < g.size(); ++i) {
                                         dx[i] += g[i] * cv;
                                     }
                                 });
}

template <typename T>
Tensor sum_impl(const Tensor& x) {
    const auto xv = Traits<T>::data(x);
    T acc(0);
    for (T v : xv) {
        acc += v;
    }
    return autograd::make_output(Shape{1}, Traits<T>::dt, storage_of(std::vector<T>{acc}), "sum",
                                 {x}, [x](const Tensor& o) {
                                     if (!x.requires_grad()) {
                                         return;
                                     }
                                     const T g = out_grad<T>(o)[0];
                                     auto dx = grad_buf<T>(x);
                                     for (auto& v : dx) {
                                         v += g;
                                     }
                                 });
}

template <typename T>
Tensor gather_cols_impl(const Tensor& x, const std::vector<std::int64_t>& idx) {
    const auto b = x.shape()[0], k = x.shape()[1];
    const auto m = static_cast<std::int64_t>(idx.size());
    const auto xv = Traits<T>::data(x);
    std::vector<T> out(static_cast<std::size_t>(b * m));
    for (std::int64_t r = 0; r < b; ++r) {
        for (std::int64_t j = 0; j < m; ++j) {
            out[static_cast<std::size_t>(r * m + j)] =
                xv[static_cast<std::size_t>(r * k + idx[static_cast<std::size_t>(j)])];
        }
    }
    return autograd::make_output(
        Shape{b, m}, Traits<T>::dt, storage_of(std::move(out)), "gather_cols", {x},
        [x, idx, b, k, m](const Tensor& o) {
            if (!x.requires_grad()) {
                return;
            }
            const auto g = out_grad<T>(o);
            auto dx = grad_buf<T>(x);
            for (std::int64_t r = 0; r < b; ++r) {
                for (std::int64_t j = 0; j < m; ++j) {
                    dx[static_cast<std::size_t>(r * k + idx[static_cast<std::size_t>(j)])] +=
                        g[static_cast<std::size_t>(r * m + j)];
                }
            }
        });
}

template <typename T>
Tensor softmax_ce_impl(const Tensor& logits, const Tensor& labels) {
    const auto b = logits.shape()[0], k = logits.shape()[1];
    const auto zv = Traits<T>::data(logits);
    const auto tv = Traits<T>::data(labels);
    double total = 0.0;
    for (std::int64_t r = 0; r < b; ++r) {
        const T* z = zv.data() + r * k;
        const T* t = tv.data() + r * k;
        T zmax = z[0];
        for (std::int64_t j = 1; j < k; ++j) {
            zmax = std::max(zmax, z[j]);
        }
        double lse = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            lse += std::exp(static_cast<double>(z[j] - zmax));
        }
        lse = static_cast<double>(zmax) + std::log(lse);
        double dot = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            dot += static_cast<double>(t[j]) * static_cast<double>(z[j]);
        }
        total += lse - dot;
    }
    const T mean_loss = static_cast<T>(total / static_cast<double>(b));
    return autograd::make_output(
        Shape{1}, Traits<T>::dt, storage_of(std::vector<T>{mean_loss}), "softmax_cross_entropy",
        {logits, labels}, [logits, labels, b, k](const Tensor& o) {
            if (!logits.requires_grad()) {
                return;
            }
            const T g = out_grad<T>(o)[0];
            const auto zv = Traits<T>::data(logits);
            const auto tv = Traits<T>::data(labels);
            auto dz = grad_buf<T>(logits);
            const T inv_b = static_cast<T>(1) / static_cast<T>(b);
            for (std::int64_t r = 0; r < b; ++r) {
                const T* z = zv.data() + r * k;
                const T* t = tv.data() + r * k;
                T* d = dz.data() + r * k;
                T zmax = z[0];
                for (std::int64_t j = 1; j < k; ++j) {
                    zmax = std::max(zmax, z[j]);
                }
                T denom(0);
                for (std::int64_t j = 0; j < k; ++j) {
                    denom += std::exp(z[j] - zmax);
                }
                for (std::int64_t j = 0; j < k; ++j) {
                    const T p = std::exp(z[j] - zmax) / denom;
                    d[j] += g * (p - t[j]) * inv_b;
                }
            }
        });
}

template <typename T>
Tensor group_lse_impl(const Tensor& z, std::vector<std::vector<std::int64_t>> groups) {
    const auto b = z.shape()[0], n = z.shape()[1];
    const auto gcount = static_cast<std::int64_t>(groups.size());
    const auto zv = Traits<T>::data(z);
    std::vector<T> out(static_cast<std::size_t>(b * gcount));
    for (std::int64_t r = 0; r < b; ++r) {
        const T* row = zv.data() + r * n;
        for (std::int64_t g = 0; g < gcount; ++g) {
            const auto& cols = groups[static_cast<std::size_t>(g)];
            T zmax = row[cols[0]];
            for (std::size_t j = 1; j < cols.size(); ++j) {
                zmax = std::max(zmax, row[cols[j]]);
            }
            double acc = 0.0;
            for (std::int64_t c : cols) {
                acc += std::exp(static_cast<double>(row[c] - zmax));
            }
            out[static_cast<std::size_t>(r * gcount + g)] =
                static_cast<T>(static_cast<double>(zmax) + std::log(acc));
        }
    }
    return autograd::make_output(
        Shape{b, gcount}, Traits<T>::dt, storage_of(std::move(out)), "group_logsumexp", {z},
        [z, groups = std::move(groups), b, n, gcount](const Tensor& o) {
            if (!z.requires_grad()) {
                return;
            }
            const auto g = out_grad<T>(o);
            const auto ov = Traits<T>::data(o);
            const auto zv = Traits<T>::data(z);
            auto dz = grad_buf<T>(z);
            for (std::int64_t r = 0; r < b; ++r) {
                for (std::int64_t gi = 0; gi < gcount; ++gi) {
                    const T go = g[static_cast<std::size_t>(r * gcount + gi)];
                    const T lse = ov[static_cast<std::size_t>(r * gcount + gi)];
                    for (std::int64_t c : groups[static_cast<std::size_t>(gi)]) {
                        const double w = std::exp(
                            static_cast<double>(zv[static_cast<std::size_t>(r * n + c)]) -
                            static_cast<double>(lse));
                        dz[static_cast<std::size_t>(r * n + c)] +=
                            go * static_cast<T>(w);
                    }
                }
            }
        });
}

} // namespace

Tensor relu(const Tensor& x) {
    return x.dtype() == DType::f32 ? relu_impl<float>(x) : relu_impl<double>(x);
}

Tensor maxpool2d(const Tensor& x, int k, int stride) {
    if (x.shape().size() != 4) {
        throw ShapeError("maxpool2d: expects [N,C,H,W], got " + shape_str(x.shape()));
    }
    if (k < 1 || stride < 1) {
        throw ValidationError("maxpool2d: window and stride must be >= 1");
    }
    if (k > x.shape()[2] || k > x.shape()[3]) {
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                         shape_str(x.shape()));
    }
    return x.dtype() == DType::f32 ? maxpool_impl<float>(x, k, stride)
                                   : maxpool_impl<double>(x, k, stride);
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw ValidationError("dropout: rate must satisfy 0 <= p < 1, got " + std::to_string(p));
    }
    if (!training) {
        return x; // identity, same handle
    }
    return x.dtype() == DType::f32 ? dropout_impl<float>(x, p, rng) : dropout_impl<double>(x, p, rng);
}

Tensor flatten(const Tensor& x) {
    if (x.shape().size() < 2) {
        throw ShapeError("flatten: expects rank >= 2, got " + shape_str(x.shape()));
    }
    std::int64_t rest = 1;
    for (std::size_t i = 1; i < x.shape().size(); ++i) {
        rest *= x.shape()[i];
    }
    const Shape out_shape{x.shape()[0], rest};
    detail::Storage data = x.impl()->data; // row-major reshape preserves layout
    const Shape in_shape = x.shape();
    return autograd::make_output(out_shape, x.dtype(), std::move(data), "flatten", {x},
                                 [x](const Tensor& o) {
                                     if (!x.requires_grad()) {
                                         return;
                                     }
                                     if (x.dtype() == DType::f32) {
                                         const auto g = out_grad<float>(o);
                                         auto dx = grad_buf<float>(x);
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             dx[i] += g[i];
                                         }
                                     } else {
                                         const auto g = out_grad<double>(o);
                                         auto dx = grad_buf<double>(x);
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             dx[i] += g[i];
                                         }
                                     }
                                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "add");
    bool row_broadcast = false;
    if (a.shape() != b.shape()) {
        if (b.shape().size() == 1 && !a.shape().empty() && a.shape().back() == b.shape()[0]) {
            row_broadcast = true;
        } else {
            throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
        }
    }
    return a.dtype() == DType::f32 ? add_impl<float>(a, b, row_broadcast)
                                   : add_impl<double>(a, b, row_broadcast);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_dtype(a, b, "mul");
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    return a.dtype() == DType::f32 ? mul_impl<float>(a, b) : mul_impl<double>(a, b);
}

Tensor scale(const Tensor& x, double c) {
    return x.dtype() == DType::f32 ? scale_impl<float>(x, c) : scale_impl<double>(x, c);
}

Tensor sum(const Tensor& x) {
    return x.dtype() == DType::f32 ? sum_impl<float>(x) : sum_impl<double>(x);
}

Tensor gather_cols(const Tensor& x, const std::vector<std::int64_t>& idx) {
    if (x.shape().size() != 2) {
        throw ShapeError("gather_cols: expects [B,K]");
    }
    if (idx.empty()) {
        throw ValidationError("gather_cols: empty index list");
    }
    for (auto i : idx) {
        if (i < 0 || i >= x.shape()[1]) {
            throw ValidationError("gather_cols: index " + std::to_string(i) + " out of range");
        }
    }
    return x.dtype() == DType::f32 ? gather_cols_impl<float>(x, idx)
                                   : gather_cols_impl<double>(x, idx);
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& onehot_labels) {
    check_same_dtype(logits, onehot_labels, "softmax_cross_entropy");
    if (logits.shape().size() != 2 || logits.shape() != onehot_labels.shape()) {
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs labels " + shape_str(onehot_labels.shape()));
    }
    if (logits.shape()[1] < 2) {
        throw ValidationError("softmax_cross_entropy: needs K >= 2 classes");
    }
    const auto b = onehot_labels.shape()[0], k = onehot_labels.shape()[1];
    for (std::int64_t r = 0; r < b; ++r) {
        int ones = 0;
        bool clean = true;
        for (std::int64_t j = 0; j < k; ++j) {
            const double v = onehot_labels.at(r * k + j);
            if (v == 1.0) {
                ++ones;
            } else if (v != 0.0) {
                clean = false;
            }
        }
        if (ones != 1 || !clean) {
            throw ValidationError("softmax_cross_entropy: label row " + std::to_string(r) +
                                  " not one-hot");
        }
    }
    return logits.dtype() == DType::f32 ? softmax_ce_impl<float>(logits, onehot_labels)
                                        : softmax_ce_impl<double>(logits, onehot_labels);
}

Tensor group_logsumexp(const Tensor& z, const std::vector<std::vector<std::int64_t>>& groups) {
    if (z.shape().size() != 2) {
        throw ShapeError("group_logsumexp: expects [B,N], got " + shape_str(z.shape()));
    }
    if (groups.empty()) {
        throw ValidationError("group_logsumexp: no groups");
    }
    const auto n = z.shape()[1];
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) {
            throw ValidationError("group_logsumexp: group " + std::to_string(g) + " is empty");
        }
        for (std::int64_t c : groups[g]) {
            if (c < 0 || c >= n) {
                throw ValidationError("group_logsumexp: column " + std::to_string(c) +
                                      " out of range [0," + std::to_string(n) + ")");
            }
        }
    }
    return z.dtype() == DType::f32 ? group_lse_impl<float>(z, groups)
                                   : group_lse_impl<double>(z, groups);
}

std::vector<double> softmax_rows(const Tensor& logits) {
    const auto b = logits.shape()[0], k = logits.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(b * k));
    for (std::int64_t r = 0; r < b; ++r) {
        double zmax = logits.at(r * k);
        for (std::int64_t j = 1; j < k; ++j) {
            zmax = std::max(zmax, logits.at(r * k + j));
        }
        double denom = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            denom += std::exp(logits.at(r * k + j) - zmax);
        }
        for (std::int64_t j = 0; j < k; ++j) {
            out[static_cast<std::size_t>(r * k + j)] =
                std::exp(logits.at(r * k + j) - zmax) / denom;
        }
    }
    return out;
}

std::vector<std::int64_t> argmax_rows(const Tensor& logits) {
    const auto b = logits.shape()[0], k = logits.shape()[1];
    std::vector<std::int64_t> out(static_cast<std::size_t>(b));
    for (std::int64_t r = 0; r < b; ++r) {
        std::int64_t best = 0;
        double best_v = logits.at(r * k);
        for (std::int64_t j = 1; j < k; ++j) {
            const double v = logits.at(r * k + j);
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

Tensor one_hot(const std::vector<int>& labels, std::int64_t k, DType dt) {
    if (labels.empty()) {
        throw ValidationError("one_hot: empty label list");
    }
    Tensor t = Tensor::zeros({static_cast<std::int64_t>(labels.size()), k}, dt);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw ValidationError("one_hot: label " + std::to_string(labels[i]) +
                                  " out of range [0," + std::to_string(k) + ")");
        }
        t.set(static_cast<std::int64_t>(i) * k + labels[i], 1.0);
    }
    return t;
}

} // namespace seam::ops
