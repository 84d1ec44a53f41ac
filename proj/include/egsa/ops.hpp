#pragma once

#include <span>
#include <utility>
#include <vector>

#include "egsa/autograd.hpp"

namespace egsa {

enum class Arith { Add, Sub, Mul };
enum class PoolMode { Mean, Max };

// Elementwise ops. `b` broadcasts along any of its axes whose size is 1
// (a 1-channel map across channels, or per-channel weights of shape (n, c, 1, 1)).
template <typename T>
Var<T> pointwise(const Var<T>& a, const Var<T>& b, Arith op);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return pointwise(a, b, Arith::Add); }
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return pointwise(a, b, Arith::Sub); }
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return pointwise(a, b, Arith::Mul); }

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

/// Cross-correlation. `weight` is (out_c, in_c, kh, kw) with odd kh, kw; `bias`
/// is (1, out_c, 1, 1) or an empty Var.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, int stride, int padding);

template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> softplus(const Var<T>& x);
template <typename T>
Var<T> abs(const Var<T>& x);

/// Per-pixel reduction across channels. Max routes its gradient to the first maximal channel.
template <typename T>
Var<T> channel_pool(const Var<T>& x, PoolMode mode);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// Corner-aligned bilinear resampling.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);
template <typename T>
BasicTensor<T> resize_bilinear(const BasicTensor<T>& x, int out_h, int out_w);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
template <typename T>
Var<T> mean_abs(const Var<T>& x);
/// sqrt(mean(x^2)); the gradient at x == 0 is taken as 0.
template <typename T>
Var<T> rms(const Var<T>& x);

/// attention * (1 + beta * edges). `edges` is a constant: no gradient flows into it.
template <typename T>
Var<T> edge_gate(const Var<T>& attention, const BasicTensor<T>& edges, const Var<T>& beta);

/// gate * current + (1 - gate) * previous, clamped to the elementwise [min, max] of the two.
template <typename T>
Var<T> gated_blend(const Var<T>& gate, const Var<T>& current, const Var<T>& previous);

/// Forward differences along columns (x) and rows (y), last column / row zero.
template <typename T>
Var<T> forward_diff_x(const Var<T>& x);
template <typename T>
Var<T> forward_diff_y(const Var<T>& x);
/// Unit normals (-gx, -gy, 1) / norm from 1-channel gradient maps; returns 3 channels.
template <typename T>
Var<T> normals_from_gradients(const Var<T>& gx, const Var<T>& gy);

/// Mean over pixels of -log softmax(logits)[label]. `labels` has n*h*w entries.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

}  // namespace egsa
