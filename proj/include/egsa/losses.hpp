#pragma once

#include <span>
#include <utility>
#include <vector>

#include "egsa/ops.hpp"

namespace egsa {

/// Total loss weights. `beta_seg` weights the segmentation term and is unrelated to
/// the fusion gating coefficients.
struct LossWeights {
    double alpha = 1.0;
    double beta_seg = 0.1;
};

/// Forward differences (gx, gy) of a 1-channel depth map, last column / row zero.
template <typename T>
std::pair<Var<T>, Var<T>> depth_gradients(const Var<T>& depth);

/// Per-pixel unit normals (-gx, -gy, 1) / norm, unit focal length. 3 channels.
template <typename T>
Var<T> surface_normals(const Var<T>& depth);

/// rms(D - D*) + mean|grad D - grad D*| + mean|N_D - N_D*|.
template <typename T>
Var<T> depth_loss(const Var<T>& pred, const Var<T>& target);

/// Pixel-mean cross-entropy. `labels` holds n*h*w class indices.
template <typename T>
Var<T> seg_loss(const Var<T>& logits, std::span<const int> labels);

/// alpha * mean(depth_terms) + beta_seg * mean(seg_terms).
template <typename T>
Var<T> total_loss(const std::vector<Var<T>>& depth_terms, const std::vector<Var<T>>& seg_terms,
                  const LossWeights& weights);

/// Nearest-neighbour (corner-aligned) resampling of a row-major class-index map.
std::vector<int> downsample_labels(std::span<const int> labels, int height, int width, int out_h, int out_w);

}  // namespace egsa
