#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "egsa/tensor.hpp"

namespace egsa {

enum class EdgeSource { RGB, Depth };

std::string to_string(EdgeSource source);

struct CannyParams {
    double sigma = 1.4;
    double low = 0.1;
    double high = 0.3;
};

/// Binary edge maps, one per decoder scale, coarsest first. Each level is (1, 1, H_k, W_k).
struct EdgePyramid {
    std::vector<Tensor4> levels;
    EdgeSource source = EdgeSource::RGB;
};

/// ITU-R BT.601 luma of a (1, 3, H, W) image.
Tensor4 rgb_to_gray(const Tensor4& rgb);

/// Classical Canny on a (1, 1, H, W) image: Gaussian blur truncated at 3 sigma,
/// Sobel gradients, 4-direction non-maximum suppression, 8-connected hysteresis.
/// Thresholds apply to the unnormalized Sobel magnitude. Returns a {0,1} map.
Tensor4 canny(const Tensor4& gray, const CannyParams& params = {});

/// Min-max normalizes depth to [0, 1] and runs canny. Constant depth gives no edges.
Tensor4 depth_to_edges(const Tensor4& depth, const CannyParams& params = {});

/// Max-pools a full-resolution edge map to each (height, width). Every target must
/// divide the source dimensions.
EdgePyramid build_pyramid(const Tensor4& edges, std::span<const std::pair<int, int>> scale_dims, EdgeSource source);

/// Max-pool downsampling of a binary map by an integer window.
Tensor4 max_pool_to(const Tensor4& map, int out_h, int out_w);

}  // namespace egsa
