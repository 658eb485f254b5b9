#include "peftbench/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace peftbench::ops {

namespace {

[[noreturn]] void shape_fail(const char* op, const std::string& detail)
{
    throw ShapeError(std::string(op) + ": " + detail);
}

// Maps every output index of a broadcast to the flat index of one operand.
struct BroadcastMap {
    bool identity = true;
    std::vector<std::size_t> index;

    std::size_t operator()(std::size_t i) const { return identity ? i : index[i]; }
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op)
{
    std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1) {
            shape_fail(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

BroadcastMap broadcast_map(const Shape& out, const Shape& in)
{
    BroadcastMap m;
    if (in == out) return m;
    m.identity = false;
    std::size_t r = out.size();
    std::vector<std::size_t> in_stride(r, 0);
    std::size_t stride = 1;
    for (std::size_t k = 0; k < in.size(); ++k) {
        std::size_t axis = in.size() - 1 - k;
        std::size_t oaxis = r - 1 - k;
        in_stride[oaxis] = in[axis] == 1 ? 0 : stride;
        stride *= in[axis];
    }
    std::size_t n = shape_numel(out);
    m.index.resize(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        m.index[i] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += in_stride[ax];
            if (idx[ax] < out[ax]) break;
            off -= in_stride[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    return m;
}

enum class BinKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, const char* op)
{
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
    auto ma = broadcast_map(out_shape, a.shape());
    auto mb = broadcast_map(out_shape, b.shape());
    std::size_t n = shape_numel(out_shape);
    std::vector<double> out(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        double x = av[ma(i)];
        double y = bv[mb(i)];
        out[i] = kind == BinKind::Add ? x + y : kind == BinKind::Sub ? x - y : x * y;
    }
    return make_result(op, out_shape, std::move(out), {a, b},
                       [a, b, ma, mb, kind](std::span<const double>, std::span<const double> g) {
                           std::size_t n = g.size();
                           if (a.requires_grad()) {
                               std::vector<double> ga(a.numel(), 0.0);
                               auto bv = b.values();
                               for (std::size_t i = 0; i < n; ++i) {
                                   ga[ma(i)] += kind == BinKind::Mul ? g[i] * bv[mb(i)] : g[i];
                               }
                               accumulate_grad(a, ga);
                           }
                           if (b.requires_grad()) {
                               std::vector<double> gb(b.numel(), 0.0);
                               auto av = a.values();
                               for (std::size_t i = 0; i < n; ++i) {
                                   double d = kind == BinKind::Mul ? g[i] * av[ma(i)]
                                              : kind == BinKind::Sub ? -g[i]
                                                                     : g[i];
                                   gb[mb(i)] += d;
                               }
                               accumulate_grad(b, gb);
                           }
                       });
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df)
{
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result(op, x.shape(), std::move(out), {x}, [x, df](std::span<const double>, std::span<const double> g) {
        auto xv = x.values();
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * df(xv[i]);
        accumulate_grad(x, gx);
    });
}

// Splits `shape` around `axis` into (outer, extent, inner).
std::array<std::size_t, 3> split_axis(const Shape& shape, std::size_t axis)
{
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, shape[axis], inner};
}

// Shared normalization backward for groups of `count` elements:
// dx = (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat)) / sigma
void norm_backward_group(std::span<const double> dxhat, std::span<const double> xhat, double inv_sigma,
                         std::span<double> dx)
{
    double n = static_cast<double>(dxhat.size());
    double m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < dxhat.size(); ++i) {
        m1 += dxhat[i];
        m2 += dxhat[i] * xhat[i];
    }
    m1 /= n;
    m2 /= n;
    for (std::size_t i = 0; i < dxhat.size(); ++i) dx[i] = (dxhat[i] - m1 - xhat[i] * m2) * inv_sigma;
}

void require_rank(const Tensor& t, std::size_t r, const char* op, const char* what)
{
    if (t.rank() != r) {
        shape_fail(op, std::string(what) + " must be rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
    }
}

void require_vec(const Tensor& t, std::size_t n, const char* op, const char* what)
{
    if (t.rank() != 1 || t.dim(0) != n) {
        shape_fail(op, std::string(what) + " must be [" + std::to_string(n) + "], got " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& a, double c)
{
    return unary(a, "scale", [c](double v) { return c * v; }, [c](double) { return c; });
}

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() < 2 || b.rank() < 2) {
        shape_fail("matmul", "operands must be rank >= 2, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto& as = a.shape();
    const auto& bs = b.shape();
    std::size_t M = as[as.size() - 2], K = as.back();
    std::size_t K2 = bs[bs.size() - 2], N = bs.back();
    if (K != K2) {
        shape_fail("matmul", "inner dims differ: " + shape_str(as) + " x " + shape_str(bs) + " (" +
                                 std::to_string(K) + " vs " + std::to_string(K2) + ")");
    }
    std::size_t batch = shape_numel(as) / (M * K);
    bool b_shared = bs.size() == 2;
    if (!b_shared) {
        if (!std::equal(as.begin(), as.end() - 2, bs.begin(), bs.end() - 2)) {
            shape_fail("matmul", "batch dims differ: " + shape_str(as) + " x " + shape_str(bs));
        }
    }
    Shape out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(M);
    out_shape.push_back(N);
    std::vector<double> out(batch * M * N, 0.0);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t t = 0; t < batch; ++t) {
        const double* A = av.data() + t * M * K;
        const double* B = bv.data() + (b_shared ? 0 : t * K * N);
        double* C = out.data() + t * M * N;
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                double aik = A[i * K + k];
                if (aik == 0.0) continue;
                const double* brow = B + k * N;
                double* crow = C + i * N;
                for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
            }
        }
    }
    return make_result("matmul", out_shape, std::move(out), {a, b},
                       [a, b, batch, M, K, N, b_shared](std::span<const double>, std::span<const double> g) {
                           auto av = a.values();
                           auto bv = b.values();
                           if (a.requires_grad()) {
                               std::vector<double> ga(a.numel(), 0.0);
                               for (std::size_t t = 0; t < batch; ++t) {
                                   const double* G = g.data() + t * M * N;
                                   const double* B = bv.data() + (b_shared ? 0 : t * K * N);
                                   double* GA = ga.data() + t * M * K;
                                   for (std::size_t i = 0; i < M; ++i)
                                       for (std::size_t k = 0; k < K; ++k) {
                                           double s = 0.0;
                                           for (std::size_t j = 0; j < N; ++j) s += G[i * N + j] * B[k * N + j];
                                           GA[i * K + k] = s;
                                       }
                               }
                               accumulate_grad(a, ga);
                           }
                           if (b.requires_grad()) {
                               std::vector<double> gb(b.numel(), 0.0);
                               for (std::size_t t = 0; t < batch; ++t) {
                                   const double* G = g.data() + t * M * N;
                                   const double* A = av.data() + t * M * K;
                                   double* GB = gb.data() + (b_shared ? 0 : t * K * N);
                                   for (std::size_t i = 0; i < M; ++i)
                                       for (std::size_t k = 0; k < K; ++k) {
                                           double aik = A[i * K + k];
                                           if (aik == 0.0) continue;
                                           for (std::size_t j = 0; j < N; ++j) GB[k * N + j] += aik * G[i * N + j];
                                       }
                               }
                               accumulate_grad(b, gb);
                           }
                       });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias)
{
    require_rank(w, 2, "linear", "weight");
    std::size_t out_f = w.dim(0), in_f = w.dim(1);
    if (x.rank() < 1 || x.shape().back() != in_f) {
        shape_fail("linear", "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
    }
    bool has_bias = bias.defined();
    if (has_bias) require_vec(bias, out_f, "linear", "bias");
    std::size_t rows = x.numel() / in_f;
    Shape out_shape = x.shape();
    out_shape.back() = out_f;
    std::vector<double> out(rows * out_f);
    auto xv = x.values();
    auto wv = w.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * in_f;
        for (std::size_t o = 0; o < out_f; ++o) {
            const double* wr = wv.data() + o * in_f;
            double s = has_bias ? bias.values()[o] : 0.0;
            for (std::size_t i = 0; i < in_f; ++i) s += xr[i] * wr[i];
            out[r * out_f + o] = s;
        }
    }
    std::vector<Tensor> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_result("linear", out_shape, std::move(out), std::move(inputs),
                       [x, w, bias, rows, in_f, out_f](std::span<const double>, std::span<const double> g) {
                           auto xv = x.values();
                           auto wv = w.values();
                           if (x.requires_grad()) {
                               std::vector<double> gx(x.numel(), 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t o = 0; o < out_f; ++o) {
                                       double go = g[r * out_f + o];
                                       if (go == 0.0) continue;
                                       const double* wr = wv.data() + o * in_f;
                                       double* gxr = gx.data() + r * in_f;
                                       for (std::size_t i = 0; i < in_f; ++i) gxr[i] += go * wr[i];
                                   }
                               accumulate_grad(x, gx);
                           }
                           if (w.requires_grad()) {
                               std::vector<double> gw(w.numel(), 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t o = 0; o < out_f; ++o) {
                                       double go = g[r * out_f + o];
                                       if (go == 0.0) continue;
                                       const double* xr = xv.data() + r * in_f;
                                       double* gwr = gw.data() + o * in_f;
                                       for (std::size_t i = 0; i < in_f; ++i) gwr[i] += go * xr[i];
                                   }
                               accumulate_grad(w, gw);
                           }
                           if (bias.defined() && bias.requires_grad()) {
                               std::vector<double> gb(out_f, 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
                               accumulate_grad(bias, gb);
                           }
                       });
}

namespace {

struct ConvDims {
    std::size_t N, C, H, W, O, KH, KW, OH, OW, stride, pad;
};

// Calls f(x_index, w_index, y_index) for every multiply-accumulate term.
template <class F>
void conv_for_each(const ConvDims& d, F&& f)
{
    for (std::size_t n = 0; n < d.N; ++n)
        for (std::size_t o = 0; o < d.O; ++o)
            for (std::size_t c = 0; c < d.C; ++c)
                for (std::size_t kh = 0; kh < d.KH; ++kh)
                    for (std::size_t kw = 0; kw < d.KW; ++kw) {
                        std::size_t widx = ((o * d.C + c) * d.KH + kh) * d.KW + kw;
                        for (std::size_t oh = 0; oh < d.OH; ++oh) {
                            std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * d.stride + kh) -
                                                static_cast<std::ptrdiff_t>(d.pad);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.H)) continue;
                            std::size_t xrow = ((n * d.C + c) * d.H + static_cast<std::size_t>(ih)) * d.W;
                            std::size_t yrow = ((n * d.O + o) * d.OH + oh) * d.OW;
                            for (std::size_t ow = 0; ow < d.OW; ++ow) {
                                std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * d.stride + kw) -
                                                    static_cast<std::ptrdiff_t>(d.pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.W)) continue;
                                f(xrow + static_cast<std::size_t>(iw), widx, yrow + ow);
                            }
                        }
                    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, ConvGeom geom)
{
    require_rank(x, 4, "conv2d", "input");
    require_rank(w, 4, "conv2d", "weight");
    if (geom.stride == 0) shape_fail("conv2d", "stride must be >= 1");
    ConvDims d{};
    d.N = x.dim(0);
    d.C = x.dim(1);
    d.H = x.dim(2);
    d.W = x.dim(3);
    d.O = w.dim(0);
    d.KH = w.dim(2);
    d.KW = w.dim(3);
    d.stride = geom.stride;
    d.pad = geom.padding;
    if (w.dim(1) != d.C) {
        shape_fail("conv2d", "input channels " + std::to_string(d.C) + " vs weight " + shape_str(w.shape()));
    }
    if (d.H + 2 * d.pad < d.KH || d.W + 2 * d.pad < d.KW) {
        shape_fail("conv2d", "kernel " + shape_str(w.shape()) + " larger than padded input " + shape_str(x.shape()));
    }
    d.OH = (d.H + 2 * d.pad - d.KH) / d.stride + 1;
    d.OW = (d.W + 2 * d.pad - d.KW) / d.stride + 1;
    bool has_bias = bias.defined();
    if (has_bias) require_vec(bias, d.O, "conv2d", "bias");

    std::vector<double> out(d.N * d.O * d.OH * d.OW, 0.0);
    if (has_bias) {
        auto bv = bias.values();
        std::size_t plane = d.OH * d.OW;
        for (std::size_t n = 0; n < d.N; ++n)
            for (std::size_t o = 0; o < d.O; ++o)
                std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((n * d.O + o) * plane), plane, bv[o]);
    }
    {
        auto xv = x.values();
        auto wv = w.values();
        conv_for_each(d, [&](std::size_t xi, std::size_t wi, std::size_t yi) { out[yi] += wv[wi] * xv[xi]; });
    }
    std::vector<Tensor> inputs{x, w};
    if (has_bias) inputs.push_back(bias);
    return make_result("conv2d", {d.N, d.O, d.OH, d.OW}, std::move(out), std::move(inputs),
                       [x, w, bias, d](std::span<const double>, std::span<const double> g) {
                           auto xv = x.values();
                           auto wv = w.values();
                           bool gx_on = x.requires_grad(), gw_on = w.requires_grad();
                           std::vector<double> gx(gx_on ? x.numel() : 0, 0.0);
                           std::vector<double> gw(gw_on ? w.numel() : 0, 0.0);
                           if (gx_on || gw_on) {
                               conv_for_each(d, [&](std::size_t xi, std::size_t wi, std::size_t yi) {
                                   double gy = g[yi];
                                   if (gx_on) gx[xi] += wv[wi] * gy;
                                   if (gw_on) gw[wi] += xv[xi] * gy;
                               });
                           }
                           if (gx_on) accumulate_grad(x, gx);
                           if (gw_on) accumulate_grad(w, gw);
                           if (bias.defined() && bias.requires_grad()) {
                               std::vector<double> gb(d.O, 0.0);
                               std::size_t plane = d.OH * d.OW;
                               for (std::size_t n = 0; n < d.N; ++n)
                                   for (std::size_t o = 0; o < d.O; ++o)
                                       for (std::size_t p = 0; p < plane; ++p) gb[o] += g[(n * d.O + o) * plane + p];
                               accumulate_grad(bias, gb);
                           }
                       });
}

Tensor upsample_nearest2x(const Tensor& x)
{
    require_rank(x, 4, "upsample_nearest2x", "input");
    std::size_t NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<double> out(NC * 4 * H * W);
    auto xv = x.values();
    for (std::size_t p = 0; p < NC; ++p)
        for (std::size_t i = 0; i < 2 * H; ++i)
            for (std::size_t j = 0; j < 2 * W; ++j) out[(p * 2 * H + i) * 2 * W + j] = xv[(p * H + i / 2) * W + j / 2];
    return make_result("upsample_nearest2x", {x.dim(0), x.dim(1), 2 * H, 2 * W}, std::move(out), {x},
                       [x, NC, H, W](std::span<const double>, std::span<const double> g) {
                           std::vector<double> gx(x.numel(), 0.0);
                           for (std::size_t p = 0; p < NC; ++p)
                               for (std::size_t i = 0; i < 2 * H; ++i)
                                   for (std::size_t j = 0; j < 2 * W; ++j)
                                       gx[(p * H + i / 2) * W + j / 2] += g[(p * 2 * H + i) * 2 * W + j];
                           accumulate_grad(x, gx);
                       });
}

Tensor relu(const Tensor& x)
{
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Tensor softmax(const Tensor& x)
{
    if (x.rank() < 1) shape_fail("softmax", "scalar input");
    std::size_t D = x.shape().back();
    std::size_t rows = x.numel() / D;
    auto xv = x.values();
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * D;
        double* yr = out.data() + r * D;
        double mx = *std::max_element(xr, xr + D);
        double s = 0.0;
        for (std::size_t i = 0; i < D; ++i) s += (yr[i] = std::exp(xr[i] - mx));
        for (std::size_t i = 0; i < D; ++i) yr[i] /= s;
    }
    return make_result("softmax", x.shape(), std::move(out), {x},
                       [x, rows, D](std::span<const double> y, std::span<const double> g) {
                           std::vector<double> gx(x.numel());
                           for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::size_t i = 0; i < D; ++i) dot += g[r * D + i] * y[r * D + i];
                               for (std::size_t i = 0; i < D; ++i)
                                   gx[r * D + i] = y[r * D + i] * (g[r * D + i] - dot);
                           }
                           accumulate_grad(x, gx);
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps)
{
    if (x.rank() < 1) shape_fail("layer_norm", "scalar input");
    std::size_t D = x.shape().back();
    require_vec(gamma, D, "layer_norm", "gamma");
    require_vec(beta, D, "layer_norm", "beta");
    std::size_t rows = x.numel() / D;
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> xhat(x.numel()), inv_sigma(rows), out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * D;
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < D; ++i) mu += xr[i];
        mu /= static_cast<double>(D);
        for (std::size_t i = 0; i < D; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(D);
        inv_sigma[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < D; ++i) {
            xhat[r * D + i] = (xr[i] - mu) * inv_sigma[r];
            out[r * D + i] = gv[i] * xhat[r * D + i] + bv[i];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_sigma, rows, D](std::span<const double>, std::span<const double> g) {
                           auto gv = gamma.values();
                           if (x.requires_grad()) {
                               std::vector<double> gx(x.numel()), dxhat(D);
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t i = 0; i < D; ++i) dxhat[i] = g[r * D + i] * gv[i];
                                   norm_backward_group(dxhat, std::span(xhat).subspan(r * D, D), inv_sigma[r],
                                                       std::span(gx).subspan(r * D, D));
                               }
                               accumulate_grad(x, gx);
                           }
                           if (gamma.requires_grad() || beta.requires_grad()) {
                               std::vector<double> gg(D, 0.0), gb(D, 0.0);
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t i = 0; i < D; ++i) {
                                       gg[i] += g[r * D + i] * xhat[r * D + i];
                                       gb[i] += g[r * D + i];
                                   }
                               accumulate_grad(gamma, gg);
                               accumulate_grad(beta, gb);
                           }
                       });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t groups, double eps)
{
    require_rank(x, 4, "group_norm", "input");
    std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (groups == 0 || C % groups != 0) {
        shape_fail("group_norm", std::to_string(C) + " channels not divisible into " + std::to_string(groups) + " groups");
    }
    require_vec(gamma, C, "group_norm", "gamma");
    require_vec(beta, C, "group_norm", "beta");
    std::size_t cpg = C / groups;
    std::size_t gsize = cpg * HW;
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> xhat(x.numel()), inv_sigma(N * groups), out(x.numel());
    for (std::size_t blk = 0; blk < N * groups; ++blk) {
        const double* xr = xv.data() + blk * gsize;
        double mu = 0.0, var = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) mu += xr[i];
        mu /= static_cast<double>(gsize);
        for (std::size_t i = 0; i < gsize; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(gsize);
        inv_sigma[blk] = 1.0 / std::sqrt(var + eps);
        std::size_t c0 = (blk % groups) * cpg;
        for (std::size_t i = 0; i < gsize; ++i) {
            std::size_t c = c0 + i / HW;
            xhat[blk * gsize + i] = (xr[i] - mu) * inv_sigma[blk];
            out[blk * gsize + i] = gv[c] * xhat[blk * gsize + i] + bv[c];
        }
    }
    return make_result(
        "group_norm", x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, inv_sigma, N, groups, cpg, HW, gsize](std::span<const double>, std::span<const double> g) {
            auto gv = gamma.values();
            std::size_t C = groups * cpg;
            if (x.requires_grad()) {
                std::vector<double> gx(x.numel()), dxhat(gsize);
                for (std::size_t blk = 0; blk < N * groups; ++blk) {
                    std::size_t c0 = (blk % groups) * cpg;
                    for (std::size_t i = 0; i < gsize; ++i) dxhat[i] = g[blk * gsize + i] * gv[c0 + i / HW];
                    norm_backward_group(dxhat, std::span(xhat).subspan(blk * gsize, gsize), inv_sigma[blk],
                                        std::span(gx).subspan(blk * gsize, gsize));
                }
                accumulate_grad(x, gx);
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                std::vector<double> gg(C, 0.0), gb(C, 0.0);
                for (std::size_t blk = 0; blk < N * groups; ++blk) {
                    std::size_t c0 = (blk % groups) * cpg;
                    for (std::size_t i = 0; i < gsize; ++i) {
                        gg[c0 + i / HW] += g[blk * gsize + i] * xhat[blk * gsize + i];
                        gb[c0 + i / HW] += g[blk * gsize + i];
                    }
                }
                accumulate_grad(gamma, gg);
                accumulate_grad(beta, gb);
            }
        });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean, Tensor& running_var,
                  bool training, double momentum, double eps)
{
    if (x.rank() != 2 && x.rank() != 4) shape_fail("batch_norm", "input must be [N,C] or [N,C,H,W], got " + shape_str(x.shape()));
    std::size_t N = x.dim(0), C = x.dim(1), HW = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    require_vec(gamma, C, "batch_norm", "gamma");
    require_vec(beta, C, "batch_norm", "beta");
    require_vec(running_mean, C, "batch_norm", "running_mean");
    require_vec(running_var, C, "batch_norm", "running_var");
    std::size_t count = N * HW;
    if (training && count < 2) shape_fail("batch_norm", "training mode needs more than one value per channel");

    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> mean(C, 0.0), inv_sigma(C), xhat(x.numel()), out(x.numel());
    auto at = [&](std::size_t n, std::size_t c, std::size_t p) { return (n * C + c) * HW + p; };
    if (training) {
        auto rm = running_mean.mutable_values();
        auto rv = running_var.mutable_values();
        for (std::size_t c = 0; c < C; ++c) {
            double mu = 0.0, var = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t p = 0; p < HW; ++p) mu += xv[at(n, c, p)];
            mu /= static_cast<double>(count);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t p = 0; p < HW; ++p) var += (xv[at(n, c, p)] - mu) * (xv[at(n, c, p)] - mu);
            double biased = var / static_cast<double>(count);
            double unbiased = var / static_cast<double>(count - 1);
            mean[c] = mu;
            inv_sigma[c] = 1.0 / std::sqrt(biased + eps);
            rm[c] = momentum * rm[c] + (1.0 - momentum) * mu;
            rv[c] = momentum * rv[c] + (1.0 - momentum) * unbiased;
        }
    } else {
        auto rm = running_mean.values();
        auto rv = running_var.values();
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = rm[c];
            inv_sigma[c] = 1.0 / std::sqrt(rv[c] + eps);
        }
    }
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < HW; ++p) {
                auto i = at(n, c, p);
                xhat[i] = (xv[i] - mean[c]) * inv_sigma[c];
                out[i] = gv[c] * xhat[i] + bv[c];
            }
    return make_result(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, xhat, inv_sigma, training, N, C, HW](std::span<const double>, std::span<const double> g) {
            auto gv = gamma.values();
            auto at = [&](std::size_t n, std::size_t c, std::size_t p) { return (n * C + c) * HW + p; };
            if (x.requires_grad()) {
                std::vector<double> gx(x.numel());
                std::vector<double> dxhat(N * HW), xh(N * HW), dx(N * HW);
                for (std::size_t c = 0; c < C; ++c) {
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t p = 0; p < HW; ++p) {
                            dxhat[n * HW + p] = g[at(n, c, p)] * gv[c];
                            xh[n * HW + p] = xhat[at(n, c, p)];
                        }
                    if (training) {
                        norm_backward_group(dxhat, xh, inv_sigma[c], dx);
                    } else {
                        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = dxhat[k] * inv_sigma[c];
                    }
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t p = 0; p < HW; ++p) gx[at(n, c, p)] = dx[n * HW + p];
                }
                accumulate_grad(x, gx);
            }
            if (gamma.requires_grad() || beta.requires_grad()) {
                std::vector<double> gg(C, 0.0), gb(C, 0.0);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t p = 0; p < HW; ++p) {
                            gg[c] += g[at(n, c, p)] * xhat[at(n, c, p)];
                            gb[c] += g[at(n, c, p)];
                        }
                accumulate_grad(gamma, gg);
                accumulate_grad(beta, gb);
            }
        });
}

Tensor sum(const Tensor& x)
{
    auto xv = x.values();
    double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result("sum", {1}, {s}, {x}, [x](std::span<const double>, std::span<const double> g) {
        std::vector<double> gx(x.numel(), g[0]);
        accumulate_grad(x, gx);
    });
}

Tensor mean(const Tensor& x)
{
    auto xv = x.values();
    double n = static_cast<double>(xv.size());
    double s = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
    return make_result("mean", {1}, {s}, {x}, [x, n](std::span<const double>, std::span<const double> g) {
        std::vector<double> gx(x.numel(), g[0] / n);
        accumulate_grad(x, gx);
    });
}

Tensor mean_axes(const Tensor& x, std::span<const std::size_t> axes, bool keepdim)
{
    const auto& s = x.shape();
    std::vector<bool> reduced(s.size(), false);
    for (auto a : axes) {
        if (a >= s.size()) shape_fail("mean_axes", "axis " + std::to_string(a) + " out of range for " + shape_str(s));
        reduced[a] = true;
    }
    Shape kept_shape, out_shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (reduced[i]) {
            count *= s[i];
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(s[i]);
        }
        kept_shape.push_back(reduced[i] ? 1 : s[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);
    // Output index of each input element: broadcast the kept shape back over x.
    auto map = broadcast_map(s, kept_shape);
    std::vector<double> out(shape_numel(out_shape), 0.0);
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) out[map(i)] += xv[i];
    double inv = 1.0 / static_cast<double>(count);
    for (auto& v : out) v *= inv;
    return make_result("mean_axes", out_shape, std::move(out), {x},
                       [x, map, inv](std::span<const double>, std::span<const double> g) {
                           std::vector<double> gx(x.numel());
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[map(i)] * inv;
                           accumulate_grad(x, gx);
                       });
}

Tensor reshape(const Tensor& x, Shape shape)
{
    if (shape_numel(shape) != x.numel()) {
        shape_fail("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    auto xv = x.values();
    return make_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                       [x](std::span<const double>, std::span<const double> g) { accumulate_grad(x, g); });
}

Tensor transpose(const Tensor& x, std::span<const std::size_t> perm)
{
    const auto& s = x.shape();
    if (perm.size() != s.size()) shape_fail("transpose", "permutation size differs from rank of " + shape_str(s));
    std::vector<bool> used(s.size(), false);
    for (auto p : perm) {
        if (p >= s.size() || used[p]) shape_fail("transpose", "invalid permutation for " + shape_str(s));
        used[p] = true;
    }
    std::size_t r = s.size();
    std::vector<std::size_t> in_stride(r);
    std::size_t st = 1;
    for (std::size_t i = r; i-- > 0;) {
        in_stride[i] = st;
        st *= s[i];
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[perm[i]];
    std::size_t n = x.numel();
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = off;
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            off += in_stride[perm[ax]];
            if (idx[ax] < out_shape[ax]) break;
            off -= in_stride[perm[ax]] * idx[ax];
            idx[ax] = 0;
        }
    }
    auto xv = x.values();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = xv[src[i]];
    return make_result("transpose", out_shape, std::move(out), {x},
                       [x, src](std::span<const double>, std::span<const double> g) {
                           std::vector<double> gx(x.numel());
                           for (std::size_t i = 0; i < g.size(); ++i) gx[src[i]] = g[i];
                           accumulate_grad(x, gx);
                       });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t end)
{
    if (axis >= x.rank()) shape_fail("slice", "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    if (start >= end || end > x.dim(axis)) {
        shape_fail("slice", "range [" + std::to_string(start) + "," + std::to_string(end) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    auto [outer, extent, inner] = split_axis(x.shape(), axis);
    std::size_t len = end - start;
    Shape out_shape = x.shape();
    out_shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * extent + start) * inner), len * inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    return make_result("slice", out_shape, std::move(out), {x},
                       [x, outer = outer, extent = extent, inner = inner, start, len](std::span<const double>,
                                                                                   std::span<const double> g) {
                           std::vector<double> gx(x.numel(), 0.0);
                           for (std::size_t o = 0; o < outer; ++o)
                               std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                                           gx.begin() + static_cast<std::ptrdiff_t>((o * extent + start) * inner));
                           accumulate_grad(x, gx);
                       });
}

Tensor concat(std::span<const Tensor> xs, std::size_t axis)
{
    if (xs.empty()) shape_fail("concat", "no inputs");
    const auto& s0 = xs[0].shape();
    if (axis >= s0.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    std::size_t total = 0;
    for (const auto& t : xs) {
        const auto& s = t.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
        if (!ok) shape_fail("concat", "shape " + shape_str(s) + " incompatible with " + shape_str(s0) + " on axis " + std::to_string(axis));
        total += s[axis];
    }
    auto [outer, ignored, inner] = split_axis(s0, axis);
    (void)ignored;
    Shape out_shape = s0;
    out_shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& t : xs) {
        std::size_t ext = t.dim(axis);
        auto tv = t.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(o * ext * inner), ext * inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * inner));
        offsets.push_back(offset);
        offset += ext;
    }
    std::vector<Tensor> inputs(xs.begin(), xs.end());
    return make_result("concat", out_shape, std::move(out), inputs,
                       [inputs, offsets, axis, outer = outer, inner = inner, total](std::span<const double>,
                                                                                    std::span<const double> g) {
                           for (std::size_t k = 0; k < inputs.size(); ++k) {
                               const auto& t = inputs[k];
                               if (!t.requires_grad()) continue;
                               std::size_t ext = t.dim(axis);
                               std::vector<double> gt(t.numel());
                               for (std::size_t o = 0; o < outer; ++o)
                                   std::copy_n(g.begin() + static_cast<std::ptrdiff_t>((o * total + offsets[k]) * inner),
                                               ext * inner, gt.begin() + static_cast<std::ptrdiff_t>(o * ext * inner));
                               accumulate_grad(t, gt);
                           }
                       });
}

Tensor scale_shift(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::size_t axis)
{
    if (axis >= x.rank()) shape_fail("scale_shift", "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    auto [outer, C, inner] = split_axis(x.shape(), axis);
    require_vec(gamma, C, "scale_shift", "gamma");
    require_vec(beta, C, "scale_shift", "beta");
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < inner; ++i) {
                std::size_t k = (o * C + c) * inner + i;
                out[k] = gv[c] * xv[k] + bv[c];
            }
    return make_result("scale_shift", x.shape(), std::move(out), {x, gamma, beta},
                       [x, gamma, beta, outer = outer, C = C, inner = inner](std::span<const double>,
                                                                            std::span<const double> g) {
                           auto xv = x.values();
                           auto gv = gamma.values();
                           std::vector<double> gx(x.requires_grad() ? x.numel() : 0);
                           std::vector<double> gg(C, 0.0), gb(C, 0.0);
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t c = 0; c < C; ++c)
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       std::size_t k = (o * C + c) * inner + i;
                                       if (!gx.empty()) gx[k] = g[k] * gv[c];
                                       gg[c] += g[k] * xv[k];
                                       gb[c] += g[k];
                                   }
                           if (!gx.empty()) accumulate_grad(x, gx);
                           accumulate_grad(gamma, gg);
                           accumulate_grad(beta, gb);
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets)
{
    require_rank(logits, 2, "cross_entropy", "logits");
    std::size_t B = logits.dim(0), C = logits.dim(1);
    if (targets.size() != B) {
        shape_fail("cross_entropy", "batch of " + std::to_string(B) + " logits vs " + std::to_string(targets.size()) + " targets");
    }
    for (std::size_t b = 0; b < B; ++b) {
        if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= C) {
            throw DataError("cross_entropy: target class " + std::to_string(targets[b]) + " at row " + std::to_string(b) +
                            " outside [0," + std::to_string(C) + ")");
        }
    }
    auto lv = logits.values();
    std::vector<double> probs(B * C);
    double loss = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double* row = lv.data() + b * C;
        double mx = *std::max_element(row, row + C);
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += (probs[b * C + c] = std::exp(row[c] - mx));
        for (std::size_t c = 0; c < C; ++c) probs[b * C + c] /= s;
        loss += -(row[targets[b]] - mx - std::log(s));
    }
    loss /= static_cast<double>(B);
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_result("cross_entropy", {1}, {loss}, {logits},
                       [logits, probs, tgt, B, C](std::span<const double>, std::span<const double> g) {
                           std::vector<double> gl(probs);
                           double k = g[0] / static_cast<double>(B);
                           for (std::size_t b = 0; b < B; ++b) gl[b * C + static_cast<std::size_t>(tgt[b])] -= 1.0;
                           for (auto& v : gl) v *= k;
                           accumulate_grad(logits, gl);
                       });
}

Tensor mse(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) shape_fail("mse", "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto av = a.values();
    auto bv = b.values();
    double n = static_cast<double>(av.size());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
    return make_result("mse", {1}, {s / n}, {a, b}, [a, b, n](std::span<const double>, std::span<const double> g) {
        auto av = a.values();
        auto bv = b.values();
        std::vector<double> d(av.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * (av[i] - bv[i]) / n * g[0];
        accumulate_grad(a, d);
        if (b.requires_grad()) {
            for (auto& v : d) v = -v;
            accumulate_grad(b, d);
        }
    });
}

}  // namespace peftbench::ops

namespace peftbench {

namespace {

constexpr std::string_view kPrimitives[] = {
    "add",        "sub",        "mul",         "scale",    "matmul",    "linear",     "conv2d",
    "upsample2x", "relu",       "gelu",        "softmax",  "layer_norm", "group_norm", "batch_norm",
    "sum",        "mean",       "mean_axes",   "reshape",  "transpose", "slice",      "concat",
    "scale_shift", "cross_entropy", "mse",
};

const AttrValue& attr(const AttrMap& attrs, const std::string& key, std::string_view kind)
{
    auto it = attrs.find(key);
    if (it == attrs.end()) throw ConfigError(std::string(kind) + ": missing attribute '" + key + "'");
    return it->second;
}

std::int64_t attr_int(const AttrMap& attrs, const std::string& key, std::string_view kind, std::int64_t fallback,
                      bool required = false)
{
    if (!attrs.count(key)) {
        if (required) attr(attrs, key, kind);
        return fallback;
    }
    const auto& v = attr(attrs, key, kind);
    if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
    throw ConfigError(std::string(kind) + ": attribute '" + key + "' must be an integer");
}

double attr_double(const AttrMap& attrs, const std::string& key, std::string_view kind, double fallback,
                   bool required = false)
{
    if (!attrs.count(key)) {
        if (required) attr(attrs, key, kind);
        return fallback;
    }
    const auto& v = attr(attrs, key, kind);
    if (auto* d = std::get_if<double>(&v)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw ConfigError(std::string(kind) + ": attribute '" + key + "' must be numeric");
}

std::vector<std::size_t> attr_list(const AttrMap& attrs, const std::string& key, std::string_view kind)
{
    const auto& v = attr(attrs, key, kind);
    auto* l = std::get_if<std::vector<std::int64_t>>(&v);
    if (!l) throw ConfigError(std::string(kind) + ": attribute '" + key + "' must be an integer list");
    std::vector<std::size_t> out;
    for (auto x : *l) {
        if (x < 0) throw ConfigError(std::string(kind) + ": attribute '" + key + "' has a negative entry");
        out.push_back(static_cast<std::size_t>(x));
    }
    return out;
}

void arity(std::string_view kind, const std::vector<Tensor>& in, std::size_t lo, std::size_t hi)
{
    if (in.size() < lo || in.size() > hi) {
        throw ShapeError(std::string(kind) + ": expected " + std::to_string(lo) +
                         (lo == hi ? "" : ".." + std::to_string(hi)) + " inputs, got " + std::to_string(in.size()));
    }
}

}  // namespace

std::span<const std::string_view> primitive_names() { return kPrimitives; }

Tensor apply_primitive(std::string_view kind, std::vector<Tensor> in, const AttrMap& attrs)
{
    using namespace ops;
    if (kind == "add") return arity(kind, in, 2, 2), add(in[0], in[1]);
    if (kind == "sub") return arity(kind, in, 2, 2), sub(in[0], in[1]);
    if (kind == "mul") return arity(kind, in, 2, 2), mul(in[0], in[1]);
    if (kind == "scale") return arity(kind, in, 1, 1), scale(in[0], attr_double(attrs, "factor", kind, 0, true));
    if (kind == "matmul") return arity(kind, in, 2, 2), matmul(in[0], in[1]);
    if (kind == "linear") {
        arity(kind, in, 2, 3);
        return linear(in[0], in[1], in.size() == 3 ? in[2] : Tensor{});
    }
    if (kind == "conv2d") {
        arity(kind, in, 2, 3);
        ConvGeom geom{static_cast<std::size_t>(attr_int(attrs, "stride", kind, 1)),
                      static_cast<std::size_t>(attr_int(attrs, "padding", kind, 0))};
        return conv2d(in[0], in[1], in.size() == 3 ? in[2] : Tensor{}, geom);
    }
    if (kind == "upsample2x") return arity(kind, in, 1, 1), upsample_nearest2x(in[0]);
    if (kind == "relu") return arity(kind, in, 1, 1), relu(in[0]);
    if (kind == "gelu") return arity(kind, in, 1, 1), gelu(in[0]);
    if (kind == "softmax") return arity(kind, in, 1, 1), softmax(in[0]);
    if (kind == "layer_norm") {
        arity(kind, in, 3, 3);
        return layer_norm(in[0], in[1], in[2], attr_double(attrs, "eps", kind, kNormEps));
    }
    if (kind == "group_norm") {
        arity(kind, in, 3, 3);
        return group_norm(in[0], in[1], in[2], static_cast<std::size_t>(attr_int(attrs, "groups", kind, 0, true)),
                          attr_double(attrs, "eps", kind, kNormEps));
    }
    if (kind == "batch_norm") {
        arity(kind, in, 5, 5);
        return batch_norm(in[0], in[1], in[2], in[3], in[4], attr_int(attrs, "training", kind, 0) != 0,
                          attr_double(attrs, "momentum", kind, 0.9), attr_double(attrs, "eps", kind, kNormEps));
    }
    if (kind == "sum") return arity(kind, in, 1, 1), sum(in[0]);
    if (kind == "mean") return arity(kind, in, 1, 1), mean(in[0]);
    if (kind == "mean_axes") {
        arity(kind, in, 1, 1);
        auto axes = attr_list(attrs, "axes", kind);
        return mean_axes(in[0], axes, attr_int(attrs, "keepdim", kind, 0) != 0);
    }
    if (kind == "reshape") {
        arity(kind, in, 1, 1);
        auto s = attr_list(attrs, "shape", kind);
        return reshape(in[0], Shape(s.begin(), s.end()));
    }
    if (kind == "transpose") {
        arity(kind, in, 1, 1);
        auto perm = attr_list(attrs, "perm", kind);
        return transpose(in[0], perm);
    }
    if (kind == "slice") {
        arity(kind, in, 1, 1);
        return slice(in[0], static_cast<std::size_t>(attr_int(attrs, "axis", kind, 0, true)),
                     static_cast<std::size_t>(attr_int(attrs, "start", kind, 0, true)),
                     static_cast<std::size_t>(attr_int(attrs, "end", kind, 0, true)));
    }
    if (kind == "concat") {
        arity(kind, in, 1, in.size() ? in.size() : 1);
        return concat(in, static_cast<std::size_t>(attr_int(attrs, "axis", kind, 0, true)));
    }
    if (kind == "scale_shift") {
        arity(kind, in, 3, 3);
        return scale_shift(in[0], in[1], in[2], static_cast<std::size_t>(attr_int(attrs, "axis", kind, 0, true)));
    }
    if (kind == "cross_entropy") {
        arity(kind, in, 1, 1);
        auto t = attr_list(attrs, "targets", kind);
        std::vector<int> targets(t.begin(), t.end());
        return cross_entropy(in[0], targets);
    }
    if (kind == "mse") return arity(kind, in, 2, 2), mse(in[0], in[1]);
    throw ConfigError("apply_primitive: unknown primitive '" + std::string(kind) + "'");
}

}  // namespace peftbench
