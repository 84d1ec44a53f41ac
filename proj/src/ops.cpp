#include "egsa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace egsa {

namespace {

template <typename T>
BasicTensor<T>* grad_of(Node<T>* node) {
    return node->requires_grad ? &node->grad_buffer() : nullptr;
}

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

bool broadcastable(const Shape& a, const Shape& b) {
    return (b.n == a.n || b.n == 1) && (b.c == a.c || b.c == 1) && (b.h == a.h || b.h == 1) &&
           (b.w == a.w || b.w == 1);
}

// Index into b for element (n, c, h, w) of a under size-1 broadcasting.
struct BroadcastIndex {
    Shape b;
    std::size_t operator()(int n, int c, int h, int w) const {
        const int bn = b.n == 1 ? 0 : n;
        const int bc = b.c == 1 ? 0 : c;
        const int bh = b.h == 1 ? 0 : h;
        const int bw = b.w == 1 ? 0 : w;
        return ((static_cast<std::size_t>(bn) * b.c + bc) * b.h + bh) * b.w + bw;
    }
};

template <typename T>
T apply(Arith op, T x, T y) {
    switch (op) {
        case Arith::Add: return x + y;
        case Arith::Sub: return x - y;
        case Arith::Mul: return x * y;
    }
    return T(0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> pointwise(const Var<T>& a, const Var<T>& b, Arith op) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    if (!broadcastable(sa, sb)) {
        throw DimensionError("pointwise: cannot broadcast " + sb.str() + " onto " + sa.str());
    }
    BasicTensor<T> out(sa);
    const auto& av = a.value();
    const auto& bv = b.value();
    if (sa == sb) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(op, av[i], bv[i]);
    } else {
        BroadcastIndex bi{sb};
        std::size_t i = 0;
        for (int n = 0; n < sa.n; ++n)
            for (int c = 0; c < sa.c; ++c)
                for (int h = 0; h < sa.h; ++h)
                    for (int w = 0; w < sa.w; ++w, ++i) out[i] = apply(op, av[i], bv[bi(n, c, h, w)]);
    }
    Node<T>* an = a.node();
    Node<T>* bn = b.node();
    return Var<T>::from_op(std::move(out), {a, b}, [an, bn, op, sa, sb](const BasicTensor<T>& g) {
        if (auto* ga = grad_of(an)) {
            if (op == Arith::Mul) {
                const auto& bv = bn->value;
                BroadcastIndex bi{sb};
                std::size_t i = 0;
                for (int n = 0; n < sa.n; ++n)
                    for (int c = 0; c < sa.c; ++c)
                        for (int h = 0; h < sa.h; ++h)
                            for (int w = 0; w < sa.w; ++w, ++i) (*ga)[i] += g[i] * bv[bi(n, c, h, w)];
            } else {
                add_into(*ga, g);
            }
        }
        if (auto* gb = grad_of(bn)) {
            const auto& av = an->value;
            BroadcastIndex bi{sb};
            const T sign = op == Arith::Sub ? T(-1) : T(1);
            if (sa == sb) {
                for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += op == Arith::Mul ? g[i] * av[i] : sign * g[i];
            } else {
                // Reduce over broadcast axes in 64-bit, in a fixed order.
                std::vector<double> acc(sb.numel(), 0.0);
                std::size_t i = 0;
                for (int n = 0; n < sa.n; ++n)
                    for (int c = 0; c < sa.c; ++c)
                        for (int h = 0; h < sa.h; ++h)
                            for (int w = 0; w < sa.w; ++w, ++i) {
                                const double v = op == Arith::Mul ? static_cast<double>(g[i]) * av[i]
                                                                  : static_cast<double>(sign * g[i]);
                                acc[bi(n, c, h, w)] += v;
                            }
                for (std::size_t j = 0; j < acc.size(); ++j) (*gb)[j] += static_cast<T>(acc[j]);
            }
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    BasicTensor<T> out(a.shape());
    const auto& av = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
    Node<T>* an = a.node();
    return Var<T>::from_op(std::move(out), {a}, [an, factor](const BasicTensor<T>& g) {
        if (auto* ga = grad_of(an))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
    });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Output columns ow with 0 <= ow*stride + k - pad < width.
std::pair<int, int> valid_range(int out, int width, int k, int pad, int stride) {
    int lo = 0;
    while (lo < out && lo * stride + k - pad < 0) ++lo;
    int hi = out;
    while (hi > lo && (hi - 1) * stride + k - pad >= width) --hi;
    return {lo, hi};
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int padding) {
    const Shape si = input.shape();
    const Shape sw = weight.shape();
    if (sw.c != si.c) {
        throw DimensionError("conv2d: kernel expects " + std::to_string(sw.c) + " input channels, got " +
                             std::to_string(si.c));
    }
    if (sw.h % 2 == 0 || sw.w % 2 == 0) throw DimensionError("conv2d: kernel size must be odd, got " + sw.str());
    if (stride < 1 || padding < 0) throw ParameterError("conv2d: stride must be >= 1 and padding >= 0");
    if (sw.h > si.h + 2 * padding || sw.w > si.w + 2 * padding) {
        throw DimensionError("conv2d: kernel " + sw.str() + " larger than padded input " + si.str());
    }
    const bool has_bias = bias.valid();
    if (has_bias && bias.shape() != Shape{1, sw.n, 1, 1}) {
        throw DimensionError("conv2d: bias must have shape (1, out_c, 1, 1), got " + bias.shape().str());
    }
    const int oh_n = (si.h + 2 * padding - sw.h) / stride + 1;
    const int ow_n = (si.w + 2 * padding - sw.w) / stride + 1;
    const Shape so{si.n, sw.n, oh_n, ow_n};
    BasicTensor<T> out(so);
    const auto& x = input.value();
    const auto& wt = weight.value();

    for (int n = 0; n < si.n; ++n) {
        for (int oc = 0; oc < sw.n; ++oc) {
            T* o = out.plane(n, oc).data();
            if (has_bias) std::fill(o, o + so.plane(), bias.value()[oc]);
            for (int ic = 0; ic < si.c; ++ic) {
                const T* in = x.plane(n, ic).data();
                for (int kh = 0; kh < sw.h; ++kh) {
                    for (int kw = 0; kw < sw.w; ++kw) {
                        const T wv = wt.at(oc, ic, kh, kw);
                        auto [lo, hi] = valid_range(ow_n, si.w, kw, padding, stride);
                        for (int oh = 0; oh < oh_n; ++oh) {
                            const int ih = oh * stride + kh - padding;
                            if (ih < 0 || ih >= si.h) continue;
                            T* orow = o + static_cast<std::size_t>(oh) * ow_n;
                            const T* irow = in + static_cast<std::size_t>(ih) * si.w + kw - padding;
                            if (stride == 1) {
                                for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow];
                            } else {
                                for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * irow[ow * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    Node<T>* xn = input.node();
    Node<T>* wn = weight.node();
    Node<T>* bn = has_bias ? bias.node() : nullptr;
    std::vector<Var<T>> ins{input, weight};
    if (has_bias) ins.push_back(bias);
    return Var<T>::from_op(std::move(out), std::move(ins), [=](const BasicTensor<T>& g) {
        const auto& xv = xn->value;
        const auto& wv_t = wn->value;
        BasicTensor<T>* gx = grad_of(xn);
        BasicTensor<T>* gw = grad_of(wn);
        if (bn != nullptr) {
            if (auto* gb = grad_of(bn)) {
                for (int oc = 0; oc < sw.n; ++oc) {
                    double acc = 0.0;
                    for (int n = 0; n < si.n; ++n)
                        for (T v : g.plane(n, oc)) acc += v;
                    (*gb)[oc] += static_cast<T>(acc);
                }
            }
        }
        if (gx == nullptr && gw == nullptr) return;
        std::vector<double> wacc(gw ? sw.numel() : 0, 0.0);
        for (int n = 0; n < si.n; ++n) {
            for (int oc = 0; oc < sw.n; ++oc) {
                const T* go = g.plane(n, oc).data();
                for (int ic = 0; ic < si.c; ++ic) {
                    const T* in = xv.plane(n, ic).data();
                    T* gin = gx ? gx->plane(n, ic).data() : nullptr;
                    for (int kh = 0; kh < sw.h; ++kh) {
                        for (int kw = 0; kw < sw.w; ++kw) {
                            const std::size_t widx = wv_t.index(oc, ic, kh, kw);
                            const T wv = wv_t[widx];
                            auto [lo, hi] = valid_range(ow_n, si.w, kw, padding, stride);
                            double wsum = 0.0;
                            for (int oh = 0; oh < oh_n; ++oh) {
                                const int ih = oh * stride + kh - padding;
                                if (ih < 0 || ih >= si.h) continue;
                                const T* grow = go + static_cast<std::size_t>(oh) * ow_n;
                                const std::size_t ioff = static_cast<std::size_t>(ih) * si.w + kw - padding;
                                T partial = T(0);
                                if (stride == 1) {
                                    const T* irow = in + ioff;
                                    if (gin) {
                                        T* girow = gin + ioff;
                                        for (int ow = lo; ow < hi; ++ow) girow[ow] += wv * grow[ow];
                                    }
                                    if (gw)
                                        for (int ow = lo; ow < hi; ++ow) partial += grow[ow] * irow[ow];
                                } else {
                                    const T* irow = in + ioff;
                                    if (gin) {
                                        T* girow = gin + ioff;
                                        for (int ow = lo; ow < hi; ++ow) girow[ow * stride] += wv * grow[ow];
                                    }
                                    if (gw)
                                        for (int ow = lo; ow < hi; ++ow) partial += grow[ow] * irow[ow * stride];
                                }
                                wsum += partial;
                            }
                            if (gw) wacc[widx] += wsum;
                        }
                    }
                }
            }
        }
        if (gw)
            for (std::size_t i = 0; i < wacc.size(); ++i) (*gw)[i] += static_cast<T>(wacc[i]);
    });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    BasicTensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        if (v >= T(0)) {
            out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
            const T e = std::exp(v);
            out[i] = e / (T(1) + e);
        }
    }
    Node<T>* xn = x.node();
    auto result = Var<T>::from_op(std::move(out), {x}, nullptr);
    if (result.requires_grad()) {
        Node<T>* yn = result.node();
        yn->backward_fn = [xn, yn](const BasicTensor<T>& g) {
            if (auto* gx = grad_of(xn)) {
                const auto& y = yn->value;
                for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
            }
        };
    }
    return result;
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    BasicTensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn)) {
            const auto& xv = xn->value;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > T(0)) (*gx)[i] += g[i];
        }
    });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
    BasicTensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = xv[i];
        out[i] = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn)) {
            const auto& xv = xn->value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T v = xv[i];
                const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
                (*gx)[i] += g[i] * s;
            }
        }
    });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
    BasicTensor<T> out(x.shape());
    const auto& xv = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(xv[i]);
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn)) {
            const auto& xv = xn->value;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = xv[i] > T(0) ? T(1) : (xv[i] < T(0) ? T(-1) : T(0));
                (*gx)[i] += g[i] * s;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Pooling, concatenation, resampling

template <typename T>
Var<T> channel_pool(const Var<T>& x, PoolMode mode) {
    const Shape s = x.shape();
    const Shape so{s.n, 1, s.h, s.w};
    BasicTensor<T> out(so);
    const auto& xv = x.value();
    const std::size_t plane = s.plane();
    std::vector<int> argmax(mode == PoolMode::Max ? so.numel() : 0, 0);
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
            const std::size_t o = static_cast<std::size_t>(n) * plane + p;
            if (mode == PoolMode::Mean) {
                double acc = 0.0;
                for (int c = 0; c < s.c; ++c) acc += xv[base + c * plane];
                out[o] = static_cast<T>(acc / s.c);
            } else {
                int best = 0;
                T bv = xv[base];
                for (int c = 1; c < s.c; ++c) {
                    if (xv[base + c * plane] > bv) {
                        bv = xv[base + c * plane];
                        best = c;
                    }
                }
                out[o] = bv;
                argmax[o] = best;
            }
        }
    }
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn, s, mode, argmax = std::move(argmax)](const BasicTensor<T>& g) {
        auto* gx = grad_of(xn);
        if (!gx) return;
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n) {
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
                const std::size_t o = static_cast<std::size_t>(n) * plane + p;
                if (mode == PoolMode::Mean) {
                    const T share = g[o] / static_cast<T>(s.c);
                    for (int c = 0; c < s.c; ++c) (*gx)[base + c * plane] += share;
                } else {
                    (*gx)[base + argmax[o] * plane] += g[o];
                }
            }
        }
    });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_channels: no inputs");
    Shape so = parts.front().shape();
    so.c = 0;
    for (const auto& p : parts) {
        const Shape s = p.shape();
        if (s.n != so.n || s.h != so.h || s.w != so.w) {
            throw DimensionError("concat_channels: mismatched shapes " + parts.front().shape().str() + " and " +
                                 s.str());
        }
        so.c += s.c;
    }
    BasicTensor<T> out(so);
    std::vector<Node<T>*> nodes;
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        for (int n = 0; n < so.n; ++n)
            for (int c = 0; c < p.shape().c; ++c) {
                auto src = p.value().plane(n, c);
                std::copy(src.begin(), src.end(), out.plane(n, off + c).begin());
            }
        nodes.push_back(p.node());
        offsets.push_back(off);
        off += p.shape().c;
    }
    return Var<T>::from_op(std::move(out), parts, [nodes, offsets, so](const BasicTensor<T>& g) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            auto* gp = grad_of(nodes[k]);
            if (!gp) continue;
            for (int n = 0; n < so.n; ++n)
                for (int c = 0; c < nodes[k]->value.channels(); ++c) {
                    auto src = g.plane(n, offsets[k] + c);
                    auto dst = gp->plane(n, c);
                    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                }
        }
    });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const Shape s = x.shape();
    BasicTensor<T> out(Shape{s.n, s.c, 1, 1});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            double acc = 0.0;
            for (T v : x.value().plane(n, c)) acc += v;
            out.at(n, c, 0, 0) = static_cast<T>(acc / static_cast<double>(s.plane()));
        }
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn, s](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn)) {
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const T share = g.at(n, c, 0, 0) / static_cast<T>(s.plane());
                    for (T& v : gx->plane(n, c)) v += share;
                }
        }
    });
}

namespace {

struct Tap {
    int i0, i1;
    double f;
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(out);
    for (int o = 0; o < out; ++o) {
        const double src = out == 1 ? 0.0 : static_cast<double>(o) * (in - 1) / (out - 1);
        int i0 = static_cast<int>(std::floor(src));
        i0 = std::clamp(i0, 0, in - 1);
        const int i1 = std::min(i0 + 1, in - 1);
        taps[o] = {i0, i1, src - i0};
    }
    return taps;
}

}  // namespace

template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw DimensionError("resize_bilinear: output size must be >= 1");
    const Shape s = x.shape();
    if (s.h == out_h && s.w == out_w) return x;
    const auto ty = bilinear_taps(s.h, out_h);
    const auto tx = bilinear_taps(s.w, out_w);
    BasicTensor<T> out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            auto in = x.plane(n, c);
            auto o = out.plane(n, c);
            for (int r = 0; r < out_h; ++r) {
                const auto& yt = ty[r];
                const T fy = static_cast<T>(yt.f);
                for (int q = 0; q < out_w; ++q) {
                    const auto& xt = tx[q];
                    const T fx = static_cast<T>(xt.f);
                    const T a = in[yt.i0 * s.w + xt.i0];
                    const T b = in[yt.i0 * s.w + xt.i1];
                    const T cc = in[yt.i1 * s.w + xt.i0];
                    const T d = in[yt.i1 * s.w + xt.i1];
                    const T top = a + fx * (b - a);
                    const T bot = cc + fx * (d - cc);
                    o[r * out_w + q] = top + fy * (bot - top);
                }
            }
        }
    return out;
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
    const Shape s = x.shape();
    BasicTensor<T> out = resize_bilinear(x.value(), out_h, out_w);
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn, s, out_h, out_w](const BasicTensor<T>& g) {
        auto* gx = grad_of(xn);
        if (!gx) return;
        if (s.h == out_h && s.w == out_w) {
            add_into(*gx, g);
            return;
        }
        const auto ty = bilinear_taps(s.h, out_h);
        const auto tx = bilinear_taps(s.w, out_w);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                auto gi = gx->plane(n, c);
                auto go = g.plane(n, c);
                for (int r = 0; r < out_h; ++r) {
                    const T fy = static_cast<T>(ty[r].f);
                    for (int q = 0; q < out_w; ++q) {
                        const T fx = static_cast<T>(tx[q].f);
                        const T v = go[r * out_w + q];
                        gi[ty[r].i0 * s.w + tx[q].i0] += v * (T(1) - fx) * (T(1) - fy);
                        gi[ty[r].i0 * s.w + tx[q].i1] += v * fx * (T(1) - fy);
                        gi[ty[r].i1 * s.w + tx[q].i0] += v * (T(1) - fx) * fy;
                        gi[ty[r].i1 * s.w + tx[q].i1] += v * fx * fy;
                    }
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += v;
    Node<T>* xn = x.node();
    return Var<T>::from_op(BasicTensor<T>::scalar(static_cast<T>(acc)), {x}, [xn](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn))
            for (T& v : gx->data()) v += g[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += v;
    const double count = static_cast<double>(x.value().size());
    Node<T>* xn = x.node();
    return Var<T>::from_op(BasicTensor<T>::scalar(static_cast<T>(acc / count)), {x},
                           [xn, count](const BasicTensor<T>& g) {
                               if (auto* gx = grad_of(xn)) {
                                   const T share = static_cast<T>(g[0] / count);
                                   for (T& v : gx->data()) v += share;
                               }
                           });
}

template <typename T>
Var<T> mean_abs(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += std::abs(static_cast<double>(v));
    const double count = static_cast<double>(x.value().size());
    Node<T>* xn = x.node();
    return Var<T>::from_op(BasicTensor<T>::scalar(static_cast<T>(acc / count)), {x},
                           [xn, count](const BasicTensor<T>& g) {
                               if (auto* gx = grad_of(xn)) {
                                   const T share = static_cast<T>(g[0] / count);
                                   const auto& xv = xn->value;
                                   for (std::size_t i = 0; i < xv.size(); ++i) {
                                       if (xv[i] > T(0)) (*gx)[i] += share;
                                       else if (xv[i] < T(0)) (*gx)[i] -= share;
                                   }
                               }
                           });
}

template <typename T>
Var<T> rms(const Var<T>& x) {
    double acc = 0.0;
    for (T v : x.value().data()) acc += static_cast<double>(v) * v;
    const double count = static_cast<double>(x.value().size());
    const double r = std::sqrt(acc / count);
    Node<T>* xn = x.node();
    return Var<T>::from_op(BasicTensor<T>::scalar(static_cast<T>(r)), {x}, [xn, count, r](const BasicTensor<T>& g) {
        auto* gx = grad_of(xn);
        if (!gx || r == 0.0) return;
        const double factor = g[0] / (count * r);
        const auto& xv = xn->value;
        for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += static_cast<T>(factor * xv[i]);
    });
}

// ---------------------------------------------------------------------------
// Gating

template <typename T>
Var<T> edge_gate(const Var<T>& attention, const BasicTensor<T>& edges, const Var<T>& beta) {
    const Shape sa = attention.shape();
    if (sa.c != 1) throw DimensionError("edge_gate: attention must have 1 channel, got " + sa.str());
    const Shape se = edges.shape();
    if (se.c != 1 || se.h != sa.h || se.w != sa.w || (se.n != sa.n && se.n != 1)) {
        throw DimensionError("edge_gate: edge map " + se.str() + " does not match attention " + sa.str());
    }
    if (beta.shape() != Shape{}) throw DimensionError("edge_gate: beta must be a scalar");
    const T b = beta.value()[0];
    BasicTensor<T> out(sa);
    const auto& av = attention.value();
    const std::size_t plane = sa.plane();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T e = edges[se.n == 1 ? i % plane : i];
        out[i] = av[i] * (T(1) + b * e);
    }
    Node<T>* an = attention.node();
    Node<T>* bn = beta.node();
    return Var<T>::from_op(std::move(out), {attention, beta}, [an, bn, edges, plane](const BasicTensor<T>& g) {
        const bool shared = edges.batch() == 1;
        const T b = bn->value[0];
        if (auto* ga = grad_of(an)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T e = edges[shared ? i % plane : i];
                (*ga)[i] += g[i] * (T(1) + b * e);
            }
        }
        if (auto* gb = grad_of(bn)) {
            const auto& av = an->value;
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T e = edges[shared ? i % plane : i];
                acc += static_cast<double>(g[i]) * av[i] * e;
            }
            (*gb)[0] += static_cast<T>(acc);
        }
    });
}

template <typename T>
Var<T> gated_blend(const Var<T>& gate, const Var<T>& current, const Var<T>& previous) {
    const Shape s = current.shape();
    if (previous.shape() != s || gate.shape() != s) {
        throw DimensionError("gated_blend: gate " + gate.shape().str() + ", current " + s.str() + ", previous " +
                             previous.shape().str() + " must match");
    }
    BasicTensor<T> out(s);
    const auto& g = gate.value();
    const auto& c = current.value();
    const auto& p = previous.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = g[i] * c[i] + (T(1) - g[i]) * p[i];
        out[i] = std::clamp(v, std::min(c[i], p[i]), std::max(c[i], p[i]));
    }
    Node<T>* gn = gate.node();
    Node<T>* cn = current.node();
    Node<T>* pn = previous.node();
    return Var<T>::from_op(std::move(out), {gate, current, previous}, [gn, cn, pn](const BasicTensor<T>& go) {
        const auto& g = gn->value;
        const auto& c = cn->value;
        const auto& p = pn->value;
        if (auto* gg = grad_of(gn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gg)[i] += go[i] * (c[i] - p[i]);
        if (auto* gc = grad_of(cn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gc)[i] += go[i] * g[i];
        if (auto* gp = grad_of(pn))
            for (std::size_t i = 0; i < go.size(); ++i) (*gp)[i] += go[i] * (T(1) - g[i]);
    });
}

// ---------------------------------------------------------------------------
// Depth geometry

template <typename T>
Var<T> forward_diff_x(const Var<T>& x) {
    const Shape s = x.shape();
    BasicTensor<T> out(s);
    const auto& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h < s.h; ++h)
                for (int w = 0; w + 1 < s.w; ++w) out.at(n, c, h, w) = xv.at(n, c, h, w + 1) - xv.at(n, c, h, w);
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn, s](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn))
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c)
                    for (int h = 0; h < s.h; ++h)
                        for (int w = 0; w + 1 < s.w; ++w) {
                            const T v = g.at(n, c, h, w);
                            gx->at(n, c, h, w + 1) += v;
                            gx->at(n, c, h, w) -= v;
                        }
    });
}

template <typename T>
Var<T> forward_diff_y(const Var<T>& x) {
    const Shape s = x.shape();
    BasicTensor<T> out(s);
    const auto& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int h = 0; h + 1 < s.h; ++h)
                for (int w = 0; w < s.w; ++w) out.at(n, c, h, w) = xv.at(n, c, h + 1, w) - xv.at(n, c, h, w);
    Node<T>* xn = x.node();
    return Var<T>::from_op(std::move(out), {x}, [xn, s](const BasicTensor<T>& g) {
        if (auto* gx = grad_of(xn))
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c)
                    for (int h = 0; h + 1 < s.h; ++h)
                        for (int w = 0; w < s.w; ++w) {
                            const T v = g.at(n, c, h, w);
                            gx->at(n, c, h + 1, w) += v;
                            gx->at(n, c, h, w) -= v;
                        }
    });
}

template <typename T>
Var<T> normals_from_gradients(const Var<T>& gx, const Var<T>& gy) {
    const Shape s = gx.shape();
    if (s.c != 1 || gy.shape() != s) {
        throw DimensionError("normals_from_gradients: expected matching 1-channel maps, got " + s.str() + " and " +
                             gy.shape().str());
    }
    BasicTensor<T> out(Shape{s.n, 3, s.h, s.w});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const T a = gx.value()[n * plane + p];
            const T b = gy.value()[n * plane + p];
            const T len = std::sqrt(a * a + b * b + T(1));
            out.plane(n, 0)[p] = -a / len;
            out.plane(n, 1)[p] = -b / len;
            out.plane(n, 2)[p] = T(1) / len;
        }
    Node<T>* xn = gx.node();
    Node<T>* yn = gy.node();
    return Var<T>::from_op(std::move(out), {gx, gy}, [xn, yn, s](const BasicTensor<T>& g) {
        auto* ga = grad_of(xn);
        auto* gb = grad_of(yn);
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n)
            for (std::size_t p = 0; p < plane; ++p) {
                const T a = xn->value[n * plane + p];
                const T b = yn->value[n * plane + p];
                const T len = std::sqrt(a * a + b * b + T(1));
                const T g0 = g.plane(n, 0)[p];
                const T g1 = g.plane(n, 1)[p];
                const T g2 = g.plane(n, 2)[p];
                // g . v with v = (-a, -b, 1)
                const T gv = -g0 * a - g1 * b + g2;
                const T len3 = len * len * len;
                if (ga) (*ga)[n * plane + p] += -g0 / len - gv * a / len3;
                if (gb) (*gb)[n * plane + p] += -g1 / len - gv * b / len3;
            }
    });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
    const Shape s = logits.shape();
    const std::size_t plane = s.plane();
    if (labels.size() != static_cast<std::size_t>(s.n) * plane) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             s.str());
    }
    for (int l : labels) {
        if (l < 0 || l >= s.c) {
            throw DataError("softmax_cross_entropy: class index " + std::to_string(l) + " outside [0, " +
                            std::to_string(s.c) + ")");
        }
    }
    const auto& z = logits.value();
    BasicTensor<T> probs(s);
    double total = 0.0;
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
            double mx = z[base];
            for (int c = 1; c < s.c; ++c) mx = std::max(mx, static_cast<double>(z[base + c * plane]));
            double denom = 0.0;
            for (int c = 0; c < s.c; ++c) denom += std::exp(static_cast<double>(z[base + c * plane]) - mx);
            for (int c = 0; c < s.c; ++c)
                probs[base + c * plane] = static_cast<T>(std::exp(static_cast<double>(z[base + c * plane]) - mx) / denom);
            const int label = labels[static_cast<std::size_t>(n) * plane + p];
            total += -(static_cast<double>(z[base + label * plane]) - mx - std::log(denom));
        }
    const double count = static_cast<double>(s.n) * static_cast<double>(plane);
    Node<T>* ln = logits.node();
    std::vector<int> lab(labels.begin(), labels.end());
    return Var<T>::from_op(BasicTensor<T>::scalar(static_cast<T>(total / count)), {logits},
                           [ln, s, count, probs = std::move(probs), lab = std::move(lab)](const BasicTensor<T>& g) {
                               auto* gl = grad_of(ln);
                               if (!gl) return;
                               const T scale_v = static_cast<T>(g[0] / count);
                               const std::size_t plane = s.plane();
                               for (int n = 0; n < s.n; ++n)
                                   for (std::size_t p = 0; p < plane; ++p) {
                                       const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
                                       const int label = lab[static_cast<std::size_t>(n) * plane + p];
                                       for (int c = 0; c < s.c; ++c) {
                                           const T target = c == label ? T(1) : T(0);
                                           (*gl)[base + c * plane] += scale_v * (probs[base + c * plane] - target);
                                       }
                                   }
                           });
}

#define EGSA_INSTANTIATE_OPS(T)                                                                        \
    template Var<T> pointwise(const Var<T>&, const Var<T>&, Arith);                                    \
    template Var<T> scale(const Var<T>&, T);                                                           \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                     \
    template Var<T> sigmoid(const Var<T>&);                                                            \
    template Var<T> relu(const Var<T>&);                                                               \
    template Var<T> softplus(const Var<T>&);                                                           \
    template Var<T> abs(const Var<T>&);                                                                \
    template Var<T> channel_pool(const Var<T>&, PoolMode);                                             \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                       \
    template Var<T> global_avg_pool(const Var<T>&);                                                    \
    template Var<T> resize_bilinear(const Var<T>&, int, int);                                          \
    template BasicTensor<T> resize_bilinear(const BasicTensor<T>&, int, int);                          \
    template Var<T> sum(const Var<T>&);                                                                \
    template Var<T> mean(const Var<T>&);                                                               \
    template Var<T> mean_abs(const Var<T>&);                                                           \
    template Var<T> rms(const Var<T>&);                                                                \
    template Var<T> edge_gate(const Var<T>&, const BasicTensor<T>&, const Var<T>&);                    \
    template Var<T> gated_blend(const Var<T>&, const Var<T>&, const Var<T>&);                          \
    template Var<T> forward_diff_x(const Var<T>&);                                                     \
    template Var<T> forward_diff_y(const Var<T>&);                                                     \
    template Var<T> normals_from_gradients(const Var<T>&, const Var<T>&);                              \
    template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);

EGSA_INSTANTIATE_OPS(float)
EGSA_INSTANTIATE_OPS(double)

}  // namespace egsa
