#include "egsa/edges.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace egsa {

std::string to_string(EdgeSource source) { return source == EdgeSource::RGB ? "RGB" : "Depth"; }

Tensor4 rgb_to_gray(const Tensor4& rgb) {
    if (rgb.channels() != 3) throw DimensionError("rgb_to_gray: expected 3 channels, got " + rgb.shape().str());
    const Shape s = rgb.shape();
    Tensor4 gray(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; ++n) {
        auto r = rgb.plane(n, 0);
        auto g = rgb.plane(n, 1);
        auto b = rgb.plane(n, 2);
        auto out = gray.plane(n, 0);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = static_cast<float>(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
        }
    }
    return gray;
}

namespace {

using Plane = std::vector<double>;

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += k[i + radius];
    }
    for (double& v : k) v /= total;
    return k;
}

// Separable blur with replicated borders.
Plane blur(const Plane& in, int h, int w, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    Plane tmp(in.size()), out(in.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * in[y * w + std::clamp(x + i, 0, w - 1)];
            tmp[y * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
            out[y * w + x] = acc;
        }
    return out;
}

void validate(const CannyParams& params) {
    if (!(params.sigma > 0.0)) throw ParameterError("canny: sigma must be positive");
    if (!(params.low > 0.0) || !(params.low < params.high)) {
        throw ParameterError("canny: thresholds must satisfy 0 < low < high");
    }
}

}  // namespace

Tensor4 canny(const Tensor4& gray, const CannyParams& params) {
    if (gray.batch() != 1 || gray.channels() != 1) {
        throw DimensionError("canny: expected a (1, 1, H, W) image, got " + gray.shape().str());
    }
    validate(params);
    const int h = gray.height();
    const int w = gray.width();
    auto src = gray.data();

    // Shift to a zero minimum so the result does not depend on an additive offset.
    const double lo = *std::min_element(src.begin(), src.end());
    Plane img(src.size());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(src[i]) - lo;
    const Plane smooth = blur(img, h, w, params.sigma);

    auto px = [&](int y, int x) { return smooth[std::clamp(y, 0, h - 1) * w + std::clamp(x, 0, w - 1)]; };
    Plane mag(img.size());
    std::vector<std::uint8_t> dir(img.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
            const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
            mag[y * w + x] = std::hypot(gx, gy);
            double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
            if (angle < 0) angle += 180.0;
            // 0: horizontal gradient, 1: 45 deg, 2: vertical, 3: 135 deg
            std::uint8_t bin = 0;
            if (angle >= 22.5 && angle < 67.5) bin = 1;
            else if (angle >= 67.5 && angle < 112.5) bin = 2;
            else if (angle >= 112.5 && angle < 157.5) bin = 3;
            dir[y * w + x] = bin;
        }

    auto mag_at = [&](int y, int x) { return (y < 0 || y >= h || x < 0 || x >= w) ? 0.0 : mag[y * w + x]; };
    // Neighbor offsets (dy, dx) along the quantized gradient direction; rows grow downward.
    static constexpr int kOffsets[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};
    Plane thin(img.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double m = mag[y * w + x];
            if (m <= 0.0) continue;
            const auto& o = kOffsets[dir[y * w + x]];
            const double ahead = mag_at(y + o[0], x + o[1]);
            const double behind = mag_at(y - o[0], x - o[1]);
            // Ties go to the pixel further along the gradient so plateaus stay one pixel wide.
            if (m > ahead && m >= behind) thin[y * w + x] = m;
        }

    Tensor4 edges(gray.shape());
    std::vector<int> stack;
    for (int i = 0; i < h * w; ++i) {
        if (thin[i] >= params.high && edges[i] == 0.0f) {
            edges[i] = 1.0f;
            stack.push_back(i);
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int py = p / w, pxx = p % w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = py + dy, nx = pxx + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        const int q = ny * w + nx;
                        if (edges[q] == 0.0f && thin[q] >= params.low) {
                            edges[q] = 1.0f;
                            stack.push_back(q);
                        }
                    }
            }
        }
    }
    return edges;
}

Tensor4 depth_to_edges(const Tensor4& depth, const CannyParams& params) {
    if (depth.batch() != 1 || depth.channels() != 1) {
        throw DimensionError("depth_to_edges: expected a (1, 1, H, W) depth map, got " + depth.shape().str());
    }
    auto d = depth.data();
    const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
    const double lo = *mn;
    const double range = static_cast<double>(*mx) - lo;
    if (!(range > 0.0)) {
        validate(params);
        return Tensor4(depth.shape());
    }
    Tensor4 norm(depth.shape());
    for (std::size_t i = 0; i < d.size(); ++i) norm[i] = static_cast<float>((d[i] - lo) / range);
    return canny(norm, params);
}

Tensor4 max_pool_to(const Tensor4& map, int out_h, int out_w) {
    const Shape s = map.shape();
    if (out_h < 1 || out_w < 1 || s.h % out_h != 0 || s.w % out_w != 0) {
        throw DimensionError("max_pool_to: " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                             " does not divide " + s.str());
    }
    const int fy = s.h / out_h;
    const int fx = s.w / out_w;
    Tensor4 out(Shape{s.n, s.c, out_h, out_w});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < out_h; ++y)
                for (int x = 0; x < out_w; ++x) {
                    float m = map.at(n, c, y * fy, x * fx);
                    for (int dy = 0; dy < fy; ++dy)
                        for (int dx = 0; dx < fx; ++dx) m = std::max(m, map.at(n, c, y * fy + dy, x * fx + dx));
                    out.at(n, c, y, x) = m;
                }
    return out;
}

EdgePyramid build_pyramid(const Tensor4& edges, std::span<const std::pair<int, int>> scale_dims, EdgeSource source) {
    EdgePyramid pyramid;
    pyramid.source = source;
    pyramid.levels.reserve(scale_dims.size());
    for (const auto& [h, w] : scale_dims) pyramid.levels.push_back(max_pool_to(edges, h, w));
    return pyramid;
}

}  // namespace egsa
