#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egsa/gradcheck.hpp"
#include "egsa/ops.hpp"

namespace egsa {

/// Fusion ablation matrix. MODEST_* are the attention baselines without edges;
/// EGSA_* gate spatial attention with the edge map.
enum class FusionVariant { ModestCaSa, ModestCa, ModestSa, EgsaCaSa, EgsaSa };

std::string to_string(FusionVariant variant);
/// Accepts the config spellings MODEST_CA_SA, MODEST_CA, MODEST_SA, EGSA_CA_SA, EGSA_SA.
FusionVariant parse_fusion_variant(const std::string& tag);
const std::vector<FusionVariant>& all_fusion_variants();

constexpr bool uses_edges(FusionVariant v) { return v == FusionVariant::EgsaCaSa || v == FusionVariant::EgsaSa; }
constexpr bool uses_channel_attention(FusionVariant v) {
    return v == FusionVariant::ModestCaSa || v == FusionVariant::ModestCa || v == FusionVariant::EgsaCaSa;
}
constexpr bool uses_spatial_attention(FusionVariant v) { return v != FusionVariant::ModestCa; }

/// Bottleneck width C / r, clamped to at least one channel.
int bottleneck_channels(int channels, int reduction);

/// 7x7 convolution over [channel-mean, channel-max]: weight (1, 2, 7, 7), bias (1, 1, 1, 1).
template <typename T>
struct SpatialAttentionWeights {
    Var<T> weight;
    Var<T> bias;
};

/// C -> C/r -> C bottleneck as 1x1 convolutions.
template <typename T>
struct ChannelAttentionWeights {
    Var<T> w1, b1, w2, b2;
};

/// Learnable fusion state for one decoder scale.
template <typename T>
struct FusionScaleParams {
    Var<T> beta_s2d;  // scalar
    Var<T> beta_d2s;  // scalar
    SpatialAttentionWeights<T> sa_seg, sa_depth;
    ChannelAttentionWeights<T> ca_seg, ca_depth;
};

struct FusionOptions {
    FusionVariant variant = FusionVariant::EgsaSa;
    /// Cross-task modulation (segmentation features scaled by the depth-derived map and
    /// vice versa). false switches to same-branch modulation, for diagnostics only.
    bool cross = true;
};

/// S = sigmoid(conv7x7([mean_c F, max_c F])), a (n, 1, H, W) map in (0, 1).
template <typename T>
Var<T> spatial_attention(const Var<T>& features, const SpatialAttentionWeights<T>& weights);

/// sigmoid(W2 relu(W1 avgpool(F))), per-channel weights of shape (n, C, 1, 1).
template <typename T>
Var<T> channel_attention(const Var<T>& features, const ChannelAttentionWeights<T>& weights);

template <typename T>
struct GatedMaps {
    Var<T> seg;    // S_s * (1 + beta_s2d * E)
    Var<T> depth;  // S_d * (1 + beta_d2s * E)
};

/// Edge gating of both attention maps. Not clamped: values may exceed 1 when beta > 0.
template <typename T>
GatedMaps<T> egsa_gate(const Var<T>& seg_attention, const Var<T>& depth_attention, const BasicTensor<T>& edges,
                       const Var<T>& beta_s2d, const Var<T>& beta_d2s);

template <typename T>
struct FusedFeatures {
    Var<T> seg;
    Var<T> depth;
};

/// Fuses the two branch feature maps at one scale. `edges` is required for EGSA
/// variants and ignored otherwise.
template <typename T>
FusedFeatures<T> egsa_fuse(const Var<T>& seg_features, const Var<T>& depth_features, const BasicTensor<T>* edges,
                           const FusionScaleParams<T>& params, const FusionOptions& options);

/// Fan-in uniform initialization of one scale's fusion weights; betas start at `beta_init`.
template <typename T>
FusionScaleParams<T> init_fusion_params(int channels, int reduction, T beta_init, std::uint64_t seed,
                                        bool requires_grad = true);

/// Gradient check of a random scalar loss through egsa_fuse (features, betas and
/// all attention weights) against central differences, in 64-bit.
struct FusionCheckInstance {
    FusionVariant variant = FusionVariant::EgsaSa;
    int channels = 4;
    int height = 4;
    int width = 4;
    std::uint64_t seed = 0;
    bool zero_edges = false;
};
GradCheckResult fusion_backward_check(const FusionCheckInstance& instance);

}  // namespace egsa
