#include "egsa/losses.hpp"

#include <cmath>
#include <string>

namespace egsa {

namespace {

void require_depth_map(const Shape& s, const char* what) {
    if (s.c != 1 || s.h < 2 || s.w < 2) {
        throw DimensionError(std::string(what) + ": expected a 1-channel map with H, W >= 2, got " + s.str());
    }
}

}  // namespace

template <typename T>
std::pair<Var<T>, Var<T>> depth_gradients(const Var<T>& depth) {
    require_depth_map(depth.shape(), "depth_gradients");
    return {forward_diff_x(depth), forward_diff_y(depth)};
}

template <typename T>
Var<T> surface_normals(const Var<T>& depth) {
    auto [gx, gy] = depth_gradients(depth);
    return normals_from_gradients(gx, gy);
}

template <typename T>
Var<T> depth_loss(const Var<T>& pred, const Var<T>& target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("depth_loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
    }
    require_depth_map(pred.shape(), "depth_loss");
    auto value_term = rms(sub(pred, target));

    auto [pgx, pgy] = depth_gradients(pred);
    auto [tgx, tgy] = depth_gradients(target);
    // Both gradient components have the same pixel count, so the mean over all
    // 2*H*W differences is the average of the two per-component means.
    auto grad_term = scale(add(mean_abs(sub(pgx, tgx)), mean_abs(sub(pgy, tgy))), T(0.5));

    auto normal_term = mean_abs(sub(normals_from_gradients(pgx, pgy), normals_from_gradients(tgx, tgy)));
    return add(add(value_term, grad_term), normal_term);
}

template <typename T>
Var<T> seg_loss(const Var<T>& logits, std::span<const int> labels) {
    return softmax_cross_entropy(logits, labels);
}

template <typename T>
Var<T> total_loss(const std::vector<Var<T>>& depth_terms, const std::vector<Var<T>>& seg_terms,
                  const LossWeights& weights) {
    if (depth_terms.empty() || seg_terms.empty()) throw ContractError("total_loss: need at least one term of each kind");
    if (weights.alpha < 0.0 || weights.beta_seg < 0.0) throw ParameterError("total_loss: weights must be >= 0");
    auto mean_of = [](const std::vector<Var<T>>& terms, double w) {
        Var<T> acc = terms.front();
        for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
        return scale(acc, static_cast<T>(w / static_cast<double>(terms.size())));
    };
    return add(mean_of(depth_terms, weights.alpha), mean_of(seg_terms, weights.beta_seg));
}

std::vector<int> downsample_labels(std::span<const int> labels, int height, int width, int out_h, int out_w) {
    if (labels.size() != static_cast<std::size_t>(height) * width) {
        throw DimensionError("downsample_labels: label count does not match " + std::to_string(height) + "x" +
                             std::to_string(width));
    }
    auto src_index = [](int o, int out, int in) {
        if (out == 1) return 0;
        return static_cast<int>(std::lround(static_cast<double>(o) * (in - 1) / (out - 1)));
    };
    std::vector<int> out(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x)
            out[y * out_w + x] = labels[src_index(y, out_h, height) * width + src_index(x, out_w, width)];
    return out;
}

#define EGSA_INSTANTIATE_LOSSES(T)                                                                      \
    template std::pair<Var<T>, Var<T>> depth_gradients(const Var<T>&);                                  \
    template Var<T> surface_normals(const Var<T>&);                                                     \
    template Var<T> depth_loss(const Var<T>&, const Var<T>&);                                           \
    template Var<T> seg_loss(const Var<T>&, std::span<const int>);                                      \
    template Var<T> total_loss(const std::vector<Var<T>>&, const std::vector<Var<T>>&, const LossWeights&);

EGSA_INSTANTIATE_LOSSES(float)
EGSA_INSTANTIATE_LOSSES(double)

}  // namespace egsa
