#include "egsa/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "egsa/rng.hpp"

namespace egsa {

std::string to_string(FusionVariant variant) {
    switch (variant) {
        case FusionVariant::ModestCaSa: return "MODEST_CA_SA";
        case FusionVariant::ModestCa: return "MODEST_CA";
        case FusionVariant::ModestSa: return "MODEST_SA";
        case FusionVariant::EgsaCaSa: return "EGSA_CA_SA";
        case FusionVariant::EgsaSa: return "EGSA_SA";
    }
    throw ContractError("unknown fusion variant");
}

FusionVariant parse_fusion_variant(const std::string& tag) {
    for (FusionVariant v : all_fusion_variants())
        if (to_string(v) == tag) return v;
    throw ContractError("unknown fusion variant '" + tag +
                        "' (expected MODEST_CA_SA, MODEST_CA, MODEST_SA, EGSA_CA_SA or EGSA_SA)");
}

const std::vector<FusionVariant>& all_fusion_variants() {
    static const std::vector<FusionVariant> variants{FusionVariant::ModestCaSa, FusionVariant::ModestCa,
                                                     FusionVariant::ModestSa, FusionVariant::EgsaCaSa,
                                                     FusionVariant::EgsaSa};
    return variants;
}

int bottleneck_channels(int channels, int reduction) { return std::max(1, channels / std::max(1, reduction)); }

template <typename T>
Var<T> spatial_attention(const Var<T>& features, const SpatialAttentionWeights<T>& weights) {
    auto pooled = concat_channels<T>({channel_pool(features, PoolMode::Mean), channel_pool(features, PoolMode::Max)});
    return sigmoid(conv2d(pooled, weights.weight, weights.bias, 1, 3));
}

template <typename T>
Var<T> channel_attention(const Var<T>& features, const ChannelAttentionWeights<T>& weights) {
    auto pooled = global_avg_pool(features);
    auto hidden = relu(conv2d(pooled, weights.w1, weights.b1, 1, 0));
    return sigmoid(conv2d(hidden, weights.w2, weights.b2, 1, 0));
}

template <typename T>
GatedMaps<T> egsa_gate(const Var<T>& seg_attention, const Var<T>& depth_attention, const BasicTensor<T>& edges,
                       const Var<T>& beta_s2d, const Var<T>& beta_d2s) {
    if (seg_attention.shape() != depth_attention.shape()) {
        throw DimensionError("egsa_gate: attention maps " + seg_attention.shape().str() + " and " +
                             depth_attention.shape().str() + " differ");
    }
    return {edge_gate(seg_attention, edges, beta_s2d), edge_gate(depth_attention, edges, beta_d2s)};
}

template <typename T>
FusedFeatures<T> egsa_fuse(const Var<T>& seg_features, const Var<T>& depth_features, const BasicTensor<T>* edges,
                           const FusionScaleParams<T>& params, const FusionOptions& options) {
    const FusionVariant variant = options.variant;
    if (!(variant == FusionVariant::ModestCaSa || variant == FusionVariant::ModestCa ||
          variant == FusionVariant::ModestSa || variant == FusionVariant::EgsaCaSa ||
          variant == FusionVariant::EgsaSa)) {
        throw ContractError("egsa_fuse: unknown fusion variant");
    }
    if (seg_features.shape() != depth_features.shape()) {
        throw DimensionError("egsa_fuse: branch features " + seg_features.shape().str() + " and " +
                             depth_features.shape().str() + " differ");
    }
    if (uses_edges(variant)) {
        if (edges == nullptr) throw ContractError("egsa_fuse: " + to_string(variant) + " requires an edge map");
        const Shape s = seg_features.shape();
        if (edges->height() != s.h || edges->width() != s.w || edges->channels() != 1) {
            throw DimensionError("egsa_fuse: edge map " + edges->shape().str() + " does not match features " +
                                 s.str());
        }
    }

    Var<T> fs = seg_features;
    Var<T> fd = depth_features;
    if (uses_channel_attention(variant)) {
        fs = mul(seg_features, channel_attention(seg_features, params.ca_seg));
        fd = mul(depth_features, channel_attention(depth_features, params.ca_depth));
        if (variant == FusionVariant::ModestCa) {
            // No spatial stage: the branches exchange their channel-weighted features.
            if (options.cross) return {fd, fs};
            return {fs, fd};
        }
    }

    Var<T> seg_map = spatial_attention(fs, params.sa_seg);
    Var<T> depth_map = spatial_attention(fd, params.sa_depth);
    if (uses_edges(variant)) {
        auto gated = egsa_gate(seg_map, depth_map, *edges, params.beta_s2d, params.beta_d2s);
        seg_map = gated.seg;
        depth_map = gated.depth;
    }
    if (options.cross) return {mul(fs, depth_map), mul(fd, seg_map)};
    return {mul(fs, seg_map), mul(fd, depth_map)};
}

namespace {

template <typename T>
Var<T> uniform_param(Shape shape, double bound, Rng& rng, bool requires_grad) {
    BasicTensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return Var<T>::leaf(std::move(t), requires_grad);
}

}  // namespace

template <typename T>
FusionScaleParams<T> init_fusion_params(int channels, int reduction, T beta_init, std::uint64_t seed,
                                        bool requires_grad) {
    Rng rng(seed);
    const int hidden = bottleneck_channels(channels, reduction);
    FusionScaleParams<T> p;
    p.beta_s2d = Var<T>::leaf(BasicTensor<T>::scalar(beta_init), requires_grad);
    p.beta_d2s = Var<T>::leaf(BasicTensor<T>::scalar(beta_init), requires_grad);
    const double sa_bound = 1.0 / std::sqrt(2.0 * 49.0);
    for (auto* sa : {&p.sa_seg, &p.sa_depth}) {
        sa->weight = uniform_param<T>(Shape{1, 2, 7, 7}, sa_bound, rng, requires_grad);
        sa->bias = uniform_param<T>(Shape{1, 1, 1, 1}, sa_bound, rng, requires_grad);
    }
    const double b1 = 1.0 / std::sqrt(static_cast<double>(channels));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto* ca : {&p.ca_seg, &p.ca_depth}) {
        ca->w1 = uniform_param<T>(Shape{hidden, channels, 1, 1}, b1, rng, requires_grad);
        ca->b1 = uniform_param<T>(Shape{1, hidden, 1, 1}, b1, rng, requires_grad);
        ca->w2 = uniform_param<T>(Shape{channels, hidden, 1, 1}, b2, rng, requires_grad);
        ca->b2 = uniform_param<T>(Shape{1, channels, 1, 1}, b2, rng, requires_grad);
    }
    return p;
}

GradCheckResult fusion_backward_check(const FusionCheckInstance& inst) {
    Rng rng(inst.seed);
    const Shape fshape{1, inst.channels, inst.height, inst.width};

    // Per pixel, channel values are a shuffled ladder with jitter so channel-max has
    // no near-ties that a finite-difference step could flip.
    auto ladder = [&]() {
        Tensor4d t(fshape);
        std::vector<int> order(inst.channels);
        for (int y = 0; y < inst.height; ++y)
            for (int x = 0; x < inst.width; ++x) {
                std::iota(order.begin(), order.end(), 0);
                for (int i = inst.channels - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
                for (int c = 0; c < inst.channels; ++c)
                    t.at(0, c, y, x) = 0.25 + 0.3 * order[c] + rng.uniform(-0.05, 0.05);
            }
        return t;
    };
    auto random = [&](Shape s, double lo, double hi) {
        Tensor4d t(s);
        for (auto& v : t.data()) v = rng.uniform(lo, hi);
        return t;
    };

    // With channel attention the features are rescaled per channel before channel-max,
    // and the bottleneck has a relu. Redraw until neither kink is within reach of a step.
    auto kinks_clear = [&](const Tensor4d& f, const ChannelAttentionWeights<double>& w) {
        if (!uses_channel_attention(inst.variant)) return true;
        const auto fv = Var<double>::constant(f);
        const auto pre = conv2d(global_avg_pool(fv), w.w1, w.b1, 1, 0).value();
        for (double v : pre.data())
            if (std::abs(v) < 0.05) return false;
        const auto scaled = mul(fv, channel_attention(fv, w)).value();
        for (int y = 0; y < inst.height; ++y)
            for (int x = 0; x < inst.width; ++x) {
                double top = -1e300, second = -1e300;
                for (int c = 0; c < inst.channels; ++c) {
                    const double v = scaled.at(0, c, y, x);
                    if (v > top) {
                        second = top;
                        top = v;
                    } else if (v > second) {
                        second = v;
                    }
                }
                if (inst.channels > 1 && top - second < 0.02) return false;
            }
        return true;
    };

    Tensor4d seg, depth;
    FusionScaleParams<double> init;
    for (int attempt = 0;; ++attempt) {
        seg = ladder();
        depth = ladder();
        init = init_fusion_params<double>(inst.channels, 16, 0.0, rng.next(), false);
        if (kinks_clear(seg, init.ca_seg) && kinks_clear(depth, init.ca_depth)) break;
        if (attempt == 1000) throw ContractError("fusion_backward_check: could not draw a kink-free instance");
    }
    Tensor4d edges(Shape{1, 1, inst.height, inst.width});
    if (!inst.zero_edges)
        for (auto& v : edges.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    const Tensor4d weight_seg = random(fshape, -1.0, 1.0);
    const Tensor4d weight_depth = random(fshape, -1.0, 1.0);

    std::vector<Tensor4d> inputs{seg,
                                 depth,
                                 Tensor4d::scalar(rng.uniform(0.2, 1.0)),
                                 Tensor4d::scalar(rng.uniform(0.2, 1.0)),
                                 init.sa_seg.weight.value(),
                                 init.sa_seg.bias.value(),
                                 init.sa_depth.weight.value(),
                                 init.sa_depth.bias.value(),
                                 init.ca_seg.w1.value(),
                                 init.ca_seg.b1.value(),
                                 init.ca_seg.w2.value(),
                                 init.ca_seg.b2.value(),
                                 init.ca_depth.w1.value(),
                                 init.ca_depth.b1.value(),
                                 init.ca_depth.w2.value(),
                                 init.ca_depth.b2.value()};

    const FusionOptions options{inst.variant, true};
    ScalarFunction fn = [&](std::span<const Var<double>> v) {
        FusionScaleParams<double> p;
        p.beta_s2d = v[2];
        p.beta_d2s = v[3];
        p.sa_seg = {v[4], v[5]};
        p.sa_depth = {v[6], v[7]};
        p.ca_seg = {v[8], v[9], v[10], v[11]};
        p.ca_depth = {v[12], v[13], v[14], v[15]};
        auto fused = egsa_fuse(v[0], v[1], &edges, p, options);
        return add(sum(mul(fused.seg, Var<double>::constant(weight_seg))),
                   sum(mul(fused.depth, Var<double>::constant(weight_depth))));
    };
    return check_gradients(fn, inputs);
}

#define EGSA_INSTANTIATE_FUSION(T)                                                                               \
    template Var<T> spatial_attention(const Var<T>&, const SpatialAttentionWeights<T>&);                         \
    template Var<T> channel_attention(const Var<T>&, const ChannelAttentionWeights<T>&);                         \
    template GatedMaps<T> egsa_gate(const Var<T>&, const Var<T>&, const BasicTensor<T>&, const Var<T>&,         \
                                    const Var<T>&);                                                              \
    template FusedFeatures<T> egsa_fuse(const Var<T>&, const Var<T>&, const BasicTensor<T>*,                     \
                                        const FusionScaleParams<T>&, const FusionOptions&);                      \
    template FusionScaleParams<T> init_fusion_params(int, int, T, std::uint64_t, bool);

EGSA_INSTANTIATE_FUSION(float)
EGSA_INSTANTIATE_FUSION(double)

}  // namespace egsa
