#include "dconn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dconn {

namespace {

using Impl = TensorImpl;

template <typename Classify>
void trace_branches(const Tensor& x, Classify classify) {
    if (BranchTrace* t = BranchTrace::active()) {
        for (double v : x.data()) t->note(classify(v));
    }
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.ndim() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
    }
}

// Maps each flat output index to the flat index of a broadcast operand.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
    const std::size_t rank = out.size();
    std::vector<std::size_t> in_stride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t d = rank; d-- > 0;) {
        in_stride[d] = in[d] == 1 ? 0 : stride;
        stride *= in[d];
    }
    std::vector<std::size_t> map(numel(out));
    std::vector<std::size_t> idx(rank, 0);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        map[i] = offset;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            offset += in_stride[d];
            if (idx[d] < out[d]) break;
            offset -= in_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    return map;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    Shape out(a.size());
    for (std::size_t d = 0; d < a.size(); ++d) {
        if (a[d] == b[d] || b[d] == 1) {
            out[d] = a[d];
        } else if (a[d] == 1) {
            out[d] = b[d];
        } else {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
    }
    return out;
}

// Shared driver for broadcasting binary ops. `f` computes the value, `da`/`db`
// return the local partial derivatives given (a, b, out).
template <typename F, typename DA, typename DB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    auto pa = a.impl();
    auto pb = b.impl();
    std::vector<double> out(n);
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(pa->data[i], pb->data[i]);
        return make_result(op, std::move(out_shape), std::move(out), {a, b}, [pa, pb, da, db](const Impl& o) {
            const std::size_t m = o.data.size();
            if (pa->requires_grad) {
                auto& g = pa->grad_buffer();
                for (std::size_t i = 0; i < m; ++i) g[i] += o.grad[i] * da(pa->data[i], pb->data[i], o.data[i]);
            }
            if (pb->requires_grad) {
                auto& g = pb->grad_buffer();
                for (std::size_t i = 0; i < m; ++i) g[i] += o.grad[i] * db(pa->data[i], pb->data[i], o.data[i]);
            }
        });
    }
    auto ma = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, a.shape()));
    auto mb = std::make_shared<std::vector<std::size_t>>(broadcast_map(out_shape, b.shape()));
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa->data[(*ma)[i]], pb->data[(*mb)[i]]);
    return make_result(op, std::move(out_shape), std::move(out), {a, b}, [pa, pb, ma, mb, da, db](const Impl& o) {
        const std::size_t m = o.data.size();
        if (pa->requires_grad) {
            auto& g = pa->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ia = (*ma)[i];
                g[ia] += o.grad[i] * da(pa->data[ia], pb->data[(*mb)[i]], o.data[i]);
            }
        }
        if (pb->requires_grad) {
            auto& g = pb->grad_buffer();
            for (std::size_t i = 0; i < m; ++i) {
                const std::size_t ib = (*mb)[i];
                g[ib] += o.grad[i] * db(pa->data[(*ma)[i]], pb->data[ib], o.data[i]);
            }
        }
    });
}

template <typename F, typename D>
Tensor unary_op(const char* op, const Tensor& x, F f, D d) {
    auto px = x.impl();
    std::vector<double> out(px->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(px->data[i]);
    return make_result(op, x.shape(), std::move(out), {x}, [px, d](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * d(px->data[i], o.data[i]);
    });
}

// Valid output range [lo, hi) along one spatial axis for kernel tap `k`.
std::pair<long, long> conv_range(long in, long out, long k, long pad, long stride) {
    long lo = pad - k > 0 ? (pad - k + stride - 1) / stride : 0;
    long last = in - 1 + pad - k;
    long hi = last < 0 ? 0 : last / stride + 1;
    return {lo, std::min(hi, out)};
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride) {
    require_rank("conv2d input", input, 4);
    require_rank("conv2d kernel", kernel, 4);
    require_rank("conv2d bias", bias, 1);
    const long N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const long K = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (static_cast<long>(kernel.dim(1)) != C) {
        throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input is " + shape_str(input.shape()));
    }
    if (static_cast<long>(bias.dim(0)) != K) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(K) +
                         " output channels");
    }
    if ((kh != 1 && kh != 3) || (kw != 1 && kw != 3)) {
        throw ShapeError("conv2d: kernel size must be 1 or 3, got " + shape_str(kernel.shape()));
    }
    if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
    const long s = static_cast<long>(stride);
    const long ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const long OH = (H + 2 * ph - kh) / s + 1, OW = (W + 2 * pw - kw) / s + 1;

    auto px = input.impl();
    auto pk = kernel.impl();
    auto pb = bias.impl();
    std::vector<double> out(static_cast<std::size_t>(N * K * OH * OW));

    const double* x = px->data.data();
    const double* w = pk->data.data();
    for (long n = 0; n < N; ++n) {
        for (long k = 0; k < K; ++k) {
            double* o = out.data() + (n * K + k) * OH * OW;
            std::fill(o, o + OH * OW, pb->data[k]);
            for (long c = 0; c < C; ++c) {
                const double* xc = x + (n * C + c) * H * W;
                for (long ki = 0; ki < kh; ++ki) {
                    auto [oy0, oy1] = conv_range(H, OH, ki, ph, s);
                    for (long kj = 0; kj < kw; ++kj) {
                        auto [ox0, ox1] = conv_range(W, OW, kj, pw, s);
                        const double wv = w[((k * C + c) * kh + ki) * kw + kj];
                        for (long oy = oy0; oy < oy1; ++oy) {
                            const double* xr = xc + (oy * s + ki - ph) * W + kj - pw;
                            double* orow = o + oy * OW;
                            if (s == 1) {
                                for (long ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox];
                            } else {
                                for (long ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xr[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }

    Shape out_shape{static_cast<std::size_t>(N), static_cast<std::size_t>(K), static_cast<std::size_t>(OH),
                    static_cast<std::size_t>(OW)};
    return make_result("conv2d", std::move(out_shape), std::move(out), {input, kernel, bias},
                       [=](const Impl& o) {
                           const double* go = o.grad.data();
                           const double* xd = px->data.data();
                           const double* wd = pk->data.data();
                           double* gx = px->requires_grad ? px->grad_buffer().data() : nullptr;
                           double* gw = pk->requires_grad ? pk->grad_buffer().data() : nullptr;
                           double* gb = pb->requires_grad ? pb->grad_buffer().data() : nullptr;
                           for (long n = 0; n < N; ++n) {
                               for (long k = 0; k < K; ++k) {
                                   const double* gk = go + (n * K + k) * OH * OW;
                                   if (gb) {
                                       double acc = 0.0;
                                       for (long i = 0; i < OH * OW; ++i) acc += gk[i];
                                       gb[k] += acc;
                                   }
                                   for (long c = 0; c < C; ++c) {
                                       const double* xc = xd + (n * C + c) * H * W;
                                       double* gxc = gx ? gx + (n * C + c) * H * W : nullptr;
                                       for (long ki = 0; ki < kh; ++ki) {
                                           auto [oy0, oy1] = conv_range(H, OH, ki, ph, s);
                                           for (long kj = 0; kj < kw; ++kj) {
                                               auto [ox0, ox1] = conv_range(W, OW, kj, pw, s);
                                               const long widx = ((k * C + c) * kh + ki) * kw + kj;
                                               const double wv = wd[widx];
                                               double wacc = 0.0;
                                               for (long oy = oy0; oy < oy1; ++oy) {
                                                   const long row = (oy * s + ki - ph) * W + kj - pw;
                                                   const double* grow = gk + oy * OW;
                                                   const double* xr = xc + row;
                                                   for (long ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * xr[ox * s];
                                                   if (gxc) {
                                                       double* gxr = gxc + row;
                                                       for (long ox = ox0; ox < ox1; ++ox) gxr[ox * s] += wv * grow[ox];
                                                   }
                                               }
                                               if (gw) gw[widx] += wacc;
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Tensor relu(const Tensor& x) {
    trace_branches(x, [](double v) { return v > 0.0; });
    return unary_op(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        "sigmoid", x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
    return unary_op(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    trace_branches(x, [](double v) { return v > 0.0 ? 1 : (v < 0.0 ? 2 : 0); });
    return unary_op(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
    trace_branches(x, [lo, hi](double v) { return v <= lo ? 0 : (v >= hi ? 2 : 1); });
    return unary_op(
        "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Tensor scale(const Tensor& x, double s) {
    return unary_op(
        "scale", x, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary_op(
        "add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor sum(const Tensor& x) {
    auto px = x.impl();
    double acc = 0.0;
    for (double v : px->data) acc += v;
    return make_result("sum", {1}, {acc}, {x}, [px](const Impl& o) {
        auto& g = px->grad_buffer();
        for (auto& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_at(x.shape(), axis);
    auto px = x.impl();
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t a = 0; a < s.extent; ++a) {
            const double* src = px->data.data() + (o * s.extent + a) * s.inner;
            double* dst = out.data() + o * s.inner;
            for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
        }
    Shape shape = x.shape();
    if (keepdim) {
        shape[axis] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<long>(axis));
        if (shape.empty()) shape = {1};
    }
    return make_result("sum_axis", std::move(shape), std::move(out), {x}, [px, s](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t oi = 0; oi < s.outer; ++oi)
            for (std::size_t a = 0; a < s.extent; ++a) {
                double* dst = g.data() + (oi * s.extent + a) * s.inner;
                const double* src = o.grad.data() + oi * s.inner;
                for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
            }
    });
}

Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const AxisSplit s = split_at(x.shape(), axis);
    auto px = x.impl();
    std::vector<double> out(s.outer * s.inner);
    auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
    BranchTrace* trace = BranchTrace::active();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = (o * s.extent) * s.inner + i;
            for (std::size_t a = 1; a < s.extent; ++a) {
                const std::size_t idx = (o * s.extent + a) * s.inner + i;
                if (px->data[idx] > px->data[best]) best = idx;
            }
            out[o * s.inner + i] = px->data[best];
            (*arg)[o * s.inner + i] = best;
            if (trace) trace->note(best);
        }
    Shape shape = x.shape();
    if (keepdim) {
        shape[axis] = 1;
    } else {
        shape.erase(shape.begin() + static_cast<long>(axis));
        if (shape.empty()) shape = {1};
    }
    return make_result("max_axis", std::move(shape), std::move(out), {x}, [px, arg](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += o.grad[i];
    });
}

Tensor gap(const Tensor& x) {
    require_rank("gap", x, 4);
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    auto px = x.impl();
    std::vector<double> out(N * C);
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t p = 0; p < N * C; ++p) {
        double acc = 0.0;
        const double* src = px->data.data() + p * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += src[i];
        out[p] = acc * inv;
    }
    return make_result("gap", {N, C}, std::move(out), {x}, [px, HW, inv](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < o.data.size(); ++p) {
            const double v = o.grad[p] * inv;
            double* dst = g.data() + p * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] += v;
        }
    });
}

namespace {

struct Lerp {
    std::size_t i0, i1;
    double w1;
};

std::vector<Lerp> lerp_table(std::size_t in, std::size_t factor) {
    std::vector<Lerp> table(in * factor);
    const double inv = 1.0 / static_cast<double>(factor);
    for (std::size_t o = 0; o < table.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) * inv - 0.5;
        if (src < 0.0) src = 0.0;
        auto i0 = static_cast<std::size_t>(src);
        if (i0 > in - 1) i0 = in - 1;
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        table[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return table;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
    require_rank("upsample_bilinear", x, 4);
    if (factor < 1) throw std::invalid_argument("upsample_bilinear: factor must be positive");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t OH = H * factor, OW = W * factor;
    auto rows = std::make_shared<std::vector<Lerp>>(lerp_table(H, factor));
    auto cols = std::make_shared<std::vector<Lerp>>(lerp_table(W, factor));
    auto px = x.impl();
    std::vector<double> out(N * C * OH * OW);
    for (std::size_t p = 0; p < N * C; ++p) {
        const double* src = px->data.data() + p * H * W;
        double* dst = out.data() + p * OH * OW;
        for (std::size_t oy = 0; oy < OH; ++oy) {
            const Lerp& r = (*rows)[oy];
            const double* r0 = src + r.i0 * W;
            const double* r1 = src + r.i1 * W;
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const Lerp& c = (*cols)[ox];
                const double top = (1.0 - c.w1) * r0[c.i0] + c.w1 * r0[c.i1];
                const double bot = (1.0 - c.w1) * r1[c.i0] + c.w1 * r1[c.i1];
                dst[oy * OW + ox] = (1.0 - r.w1) * top + r.w1 * bot;
            }
        }
    }
    return make_result("upsample_bilinear", {N, C, OH, OW}, std::move(out), {x}, [=](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < N * C; ++p) {
            double* gsrc = g.data() + p * H * W;
            const double* gdst = o.grad.data() + p * OH * OW;
            for (std::size_t oy = 0; oy < OH; ++oy) {
                const Lerp& r = (*rows)[oy];
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    const Lerp& c = (*cols)[ox];
                    const double v = gdst[oy * OW + ox];
                    gsrc[r.i0 * W + c.i0] += (1.0 - r.w1) * (1.0 - c.w1) * v;
                    gsrc[r.i0 * W + c.i1] += (1.0 - r.w1) * c.w1 * v;
                    gsrc[r.i1 * W + c.i0] += r.w1 * (1.0 - c.w1) * v;
                    gsrc[r.i1 * W + c.i1] += r.w1 * c.w1 * v;
                }
            }
        }
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank("bmm lhs", a, 3);
    require_rank("bmm rhs", b, 3);
    const std::size_t B = a.dim(0), M = a.dim(1), K = a.dim(2), Nn = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != K) {
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto pa = a.impl();
    auto pb = b.impl();
    std::vector<double> out(B * M * Nn, 0.0);
    for (std::size_t bi = 0; bi < B; ++bi) {
        const double* A = pa->data.data() + bi * M * K;
        const double* Bm = pb->data.data() + bi * K * Nn;
        double* O = out.data() + bi * M * Nn;
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < K; ++k) {
                const double av = A[i * K + k];
                for (std::size_t j = 0; j < Nn; ++j) O[i * Nn + j] += av * Bm[k * Nn + j];
            }
    }
    return make_result("bmm", {B, M, Nn}, std::move(out), {a, b}, [=](const Impl& o) {
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* A = pa->data.data() + bi * M * K;
            const double* Bm = pb->data.data() + bi * K * Nn;
            const double* G = o.grad.data() + bi * M * Nn;
            if (pa->requires_grad) {
                double* gA = pa->grad_buffer().data() + bi * M * K;
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < Nn; ++j) acc += G[i * Nn + j] * Bm[k * Nn + j];
                        gA[i * K + k] += acc;
                    }
            }
            if (pb->requires_grad) {
                double* gB = pb->grad_buffer().data() + bi * K * Nn;
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        const double av = A[i * K + k];
                        for (std::size_t j = 0; j < Nn; ++j) gB[k * Nn + j] += av * G[i * Nn + j];
                    }
            }
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul lhs", a, 2);
    require_rank("matmul rhs", b, 2);
    Tensor out = bmm(reshape(a, {1, a.dim(0), a.dim(1)}), reshape(b, {1, b.dim(0), b.dim(1)}));
    return reshape(out, {a.dim(0), b.dim(1)});
}

Tensor transpose_last(const Tensor& x) {
    if (x.ndim() < 2) throw ShapeError("transpose_last: rank must be at least 2");
    const std::size_t R = x.dim(x.ndim() - 2), C = x.dim(x.ndim() - 1);
    const std::size_t B = x.size() / (R * C);
    auto px = x.impl();
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) out[b * R * C + c * R + r] = px->data[b * R * C + r * C + c];
    Shape shape = x.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    return make_result("transpose_last", std::move(shape), std::move(out), {x}, [px, B, R, C](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) g[b * R * C + r * C + c] += o.grad[b * R * C + c * R + r];
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisSplit s = split_at(x.shape(), axis);
    auto px = x.impl();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < s.extent; ++a) mx = std::max(mx, px->data[base + a * s.inner]);
            double z = 0.0;
            for (std::size_t a = 0; a < s.extent; ++a) {
                const double e = std::exp(px->data[base + a * s.inner] - mx);
                out[base + a * s.inner] = e;
                z += e;
            }
            for (std::size_t a = 0; a < s.extent; ++a) out[base + a * s.inner] /= z;
        }
    return make_result("softmax", x.shape(), std::move(out), {x}, [px, s](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t oi = 0; oi < s.outer; ++oi)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = oi * s.extent * s.inner + i;
                double dot = 0.0;
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t idx = base + a * s.inner;
                    dot += o.grad[idx] * o.data[idx];
                }
                for (std::size_t a = 0; a < s.extent; ++a) {
                    const std::size_t idx = base + a * s.inner;
                    g[idx] += o.data[idx] * (o.grad[idx] - dot);
                }
            }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto px = x.impl();
    return make_result("reshape", std::move(shape), px->data, {x}, [px](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const AxisSplit s = split_at(x.shape(), axis);
    if (begin >= end || end > s.extent) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
    }
    const std::size_t len = end - begin;
    auto px = x.impl();
    std::vector<double> out(s.outer * len * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = px->data.data() + (o * s.extent + begin) * s.inner;
        std::copy(src, src + len * s.inner, out.begin() + static_cast<long>(o * len * s.inner));
    }
    Shape shape = x.shape();
    shape[axis] = len;
    return make_result("slice", std::move(shape), std::move(out), {x}, [px, s, begin, len](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t oi = 0; oi < s.outer; ++oi) {
            double* dst = g.data() + (oi * s.extent + begin) * s.inner;
            const double* src = o.grad.data() + oi * len * s.inner;
            for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape shape = parts.front().shape();
    split_at(shape, axis);
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        bool ok = ps.size() == shape.size();
        for (std::size_t d = 0; ok && d < ps.size(); ++d) ok = d == axis || ps[d] == shape[d];
        if (!ok) {
            throw ShapeError("concat: " + shape_str(ps) + " incompatible with " + shape_str(shape) + " on axis " +
                             std::to_string(axis));
        }
        total += ps[axis];
    }
    shape[axis] = total;
    const AxisSplit s = split_at(shape, axis);
    std::vector<double> out(numel(shape));
    std::vector<std::shared_ptr<Impl>> impls;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[axis];
        for (std::size_t o = 0; o < s.outer; ++o) {
            const double* src = p.impl()->data.data() + o * len * s.inner;
            std::copy(src, src + len * s.inner, out.begin() + static_cast<long>((o * total + off) * s.inner));
        }
        impls.push_back(p.impl());
        offsets.push_back(off);
        off += len;
    }
    return make_result("concat", std::move(shape), std::move(out), parts, [impls, offsets, s, total](const Impl& o) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
            auto& p = impls[k];
            if (!p->requires_grad) continue;
            const std::size_t len = p->data.size() / (s.outer * s.inner);
            auto& g = p->grad_buffer();
            for (std::size_t oi = 0; oi < s.outer; ++oi) {
                const double* src = o.grad.data() + (oi * total + offsets[k]) * s.inner;
                double* dst = g.data() + oi * len * s.inner;
                for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
            }
        }
    });
}

std::vector<Tensor> channel_slice(const Tensor& x, std::size_t parts) {
    if (x.ndim() < 2) throw ShapeError("channel_slice: rank must be at least 2");
    const std::size_t C = x.dim(1);
    if (parts == 0 || C % parts != 0) {
        throw ShapeError("channel_slice: " + std::to_string(C) + " channels cannot be split into " +
                         std::to_string(parts) + " equal parts");
    }
    const std::size_t width = C / parts;
    std::vector<Tensor> out;
    out.reserve(parts);
    for (std::size_t i = 0; i < parts; ++i) out.push_back(slice(x, 1, i * width, (i + 1) * width));
    return out;
}

Tensor channel_concat(const std::vector<Tensor>& parts) { return concat(parts, 1); }

Tensor shift2d(const Tensor& x, int dr, int dc) {
    if (x.ndim() < 2) throw ShapeError("shift2d: rank must be at least 2");
    const long H = static_cast<long>(x.dim(x.ndim() - 2)), W = static_cast<long>(x.dim(x.ndim() - 1));
    const std::size_t planes = x.size() / static_cast<std::size_t>(H * W);
    auto px = x.impl();
    std::vector<double> out(x.size(), 0.0);
    const long r0 = std::max(0L, -static_cast<long>(dr)), r1 = std::min(H, H - dr);
    const long c0 = std::max(0L, -static_cast<long>(dc)), c1 = std::min(W, W - dc);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = px->data.data() + p * H * W;
        double* dst = out.data() + p * H * W;
        for (long r = r0; r < r1; ++r)
            for (long c = c0; c < c1; ++c) dst[r * W + c] = src[(r + dr) * W + (c + dc)];
    }
    return make_result("shift2d", x.shape(), std::move(out), {x}, [=](const Impl& o) {
        auto& g = px->grad_buffer();
        for (std::size_t p = 0; p < planes; ++p) {
            double* dst = g.data() + p * H * W;
            const double* src = o.grad.data() + p * H * W;
            for (long r = r0; r < r1; ++r)
                for (long c = c0; c < c1; ++c) dst[(r + dr) * W + (c + dc)] += src[r * W + c];
        }
    });
}

}  // namespace dconn
