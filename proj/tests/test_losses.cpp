#include <gtest/gtest.h>

#include <cmath>

#include "egsa/gradcheck.hpp"
#include "egsa/losses.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

using namespace egsa;
using egsa::testing::kink_free_prediction;
using egsa::testing::random_tensor;

namespace {

using VarD = Var<double>;

VarD grid(int h, int w, std::vector<double> v) { return VarD::constant(Tensor4d(Shape{1, 1, h, w}, std::move(v))); }

VarD plane_x(int h, int w, double slope, double offset) {
    Tensor4d t(Shape{1, 1, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(0, 0, y, x) = slope * x + offset;
    return VarD::constant(t);
}

// Straight per-pixel evaluation of the depth loss, sharing no code with the library.
double depth_loss_oracle(const Tensor4d& d, const Tensor4d& g) {
    const int H = d.height(), W = d.width();
    auto diff = [&](const Tensor4d& t, int y, int x, bool horizontal) {
        if (horizontal) return x + 1 < W ? t.at(0, 0, y, x + 1) - t.at(0, 0, y, x) : 0.0;
        return y + 1 < H ? t.at(0, 0, y + 1, x) - t.at(0, 0, y, x) : 0.0;
    };
    double sq = 0, grad = 0, normal = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double e = d.at(0, 0, y, x) - g.at(0, 0, y, x);
            sq += e * e;
            double nd[3], ng[3];
            const double dx = diff(d, y, x, true), dy = diff(d, y, x, false);
            const double gx = diff(g, y, x, true), gy = diff(g, y, x, false);
            grad += std::abs(dx - gx) + std::abs(dy - gy);
            const double ld = std::sqrt(dx * dx + dy * dy + 1), lg = std::sqrt(gx * gx + gy * gy + 1);
            nd[0] = -dx / ld, nd[1] = -dy / ld, nd[2] = 1 / ld;
            ng[0] = -gx / lg, ng[1] = -gy / lg, ng[2] = 1 / lg;
            for (int k = 0; k < 3; ++k) normal += std::abs(nd[k] - ng[k]);
        }
    const double n = static_cast<double>(H) * W;
    return std::sqrt(sq / n) + grad / (2 * n) + normal / (3 * n);
}

}  // namespace

TEST(DepthGradients, Examples) {
    const auto [cx, cy] = depth_gradients(VarD::constant(Tensor4d(Shape{1, 1, 4, 5}, 3.0)));
    for (double v : cx.value().data()) EXPECT_EQ(v, 0.0);
    for (double v : cy.value().data()) EXPECT_EQ(v, 0.0);

    const auto [rx, ry] = depth_gradients(plane_x(4, 5, 1.0, 0.0));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(rx.value().at(0, 0, y, x), 1.0);
    for (double v : ry.value().data()) EXPECT_EQ(v, 0.0);

    const auto [gx, gy] = depth_gradients(grid(2, 2, {0, 2, 1, 5}));
    EXPECT_EQ(gx.value(), Tensor4d(Shape{1, 1, 2, 2}, std::vector<double>{2, 0, 4, 0}));
    EXPECT_EQ(gy.value(), Tensor4d(Shape{1, 1, 2, 2}, std::vector<double>{1, 3, 0, 0}));

    EXPECT_THROW(depth_gradients(VarD::constant(Tensor4d(Shape{1, 1, 1, 4}))), DimensionError);
    EXPECT_THROW(depth_gradients(VarD::constant(Tensor4d(Shape{1, 2, 3, 3}))), DimensionError);
}

TEST(SurfaceNormals, Examples) {
    const auto flat = surface_normals(VarD::constant(Tensor4d(Shape{1, 1, 3, 3}, 1.5))).value();
    EXPECT_EQ(flat.shape(), (Shape{1, 3, 3, 3}));
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            EXPECT_EQ(flat.at(0, 0, y, x), 0.0);
            EXPECT_EQ(flat.at(0, 1, y, x), 0.0);
            EXPECT_EQ(flat.at(0, 2, y, x), 1.0);
        }

    const auto n = surface_normals(plane_x(4, 4, 1.0, 0.0)).value();
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            EXPECT_NEAR(n.at(0, 0, y, x), -1 / std::sqrt(2.0), 1e-12);
            EXPECT_EQ(n.at(0, 1, y, x), 0.0);
            EXPECT_NEAR(n.at(0, 2, y, x), 1 / std::sqrt(2.0), 1e-12);
        }
}

TEST(SurfaceNormals, UnitLength) {
    for (int s = 0; s < 20; ++s) {
        Rng rng(s);
        const auto n = surface_normals(VarD::constant(random_tensor(Shape{1, 1, 5, 6}, rng, 0.1, 4.0))).value();
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 6; ++x) {
                double len = 0;
                for (int c = 0; c < 3; ++c) len += n.at(0, c, y, x) * n.at(0, c, y, x);
                EXPECT_NEAR(len, 1.0, 1e-12);
            }
    }
}

TEST(DepthLoss, Examples) {
    Rng rng(1);
    const auto d = VarD::constant(random_tensor(Shape{1, 1, 6, 7}, rng, 0.1, 3.0));
    EXPECT_EQ(depth_loss(d, d).value().item(), 0.0);

    for (double c : {0.25, 1.0, 3.5}) {
        Tensor4d shifted = d.value();
        for (auto& v : shifted.data()) v += c;
        EXPECT_NEAR(depth_loss(VarD::constant(shifted), d).value().item(), c, 1e-12);
    }

    // D = 2 D* on the plane D* = x: errors x, gradient differences (1, 0) except the last
    // column, normals (-2, 0, 1)/sqrt5 vs (-1, 0, 1)/sqrt2 except the last column.
    const int H = 5, W = 6;
    const auto gt = plane_x(H, W, 1.0, 0.0);
    const auto pred = plane_x(H, W, 2.0, 0.0);
    const double value = depth_loss(pred, gt).value().item();
    EXPECT_NEAR(value, depth_loss_oracle(pred.value(), gt.value()), 1e-12);
    double sq = 0;
    for (int x = 0; x < W; ++x) sq += H * x * x;
    const double interior = static_cast<double>(H) * (W - 1);
    const double nx = std::abs(-2 / std::sqrt(5.0) + 1 / std::sqrt(2.0));
    const double nz = std::abs(1 / std::sqrt(5.0) - 1 / std::sqrt(2.0));
    const double closed =
        std::sqrt(sq / (H * W)) + interior / (2.0 * H * W) + interior * (nx + nz) / (3.0 * H * W);
    EXPECT_NEAR(value, closed, 1e-12);

    EXPECT_THROW(depth_loss(d, VarD::constant(Tensor4d(Shape{1, 1, 6, 6}))), DimensionError);
}

TEST(DepthLoss, MatchesBruteForceOracleAndIsNonNegative) {
    for (int s = 0; s < 30; ++s) {
        Rng rng(100 + s);
        const Shape shape{1, 1, 2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7))};
        const auto d = random_tensor(shape, rng, 0.1, 5.0);
        const auto g = random_tensor(shape, rng, 0.1, 5.0);
        const double v = depth_loss(VarD::constant(d), VarD::constant(g)).value().item();
        EXPECT_NEAR(v, depth_loss_oracle(d, g), 1e-12);
        EXPECT_GT(v, 0.0);
    }
}

TEST(DepthLoss, GradientAndNormalTermsIgnoreCommonOffset) {
    for (int s = 0; s < 10; ++s) {
        Rng rng(200 + s);
        const Shape shape{1, 1, 5, 5};
        const auto d = random_tensor(shape, rng, 0.1, 2.0);
        const auto g = random_tensor(shape, rng, 0.1, 2.0);
        Tensor4d d2 = d, g2 = g;
        const double c = rng.uniform(0.5, 4.0);
        for (auto& v : d2.data()) v += c;
        for (auto& v : g2.data()) v += c;
        const auto [ax, ay] = depth_gradients(VarD::constant(d));
        const auto [bx, by] = depth_gradients(VarD::constant(d2));
        for (std::size_t i = 0; i < ax.value().size(); ++i) {
            EXPECT_NEAR(ax.value()[i], bx.value()[i], 1e-12);
            EXPECT_NEAR(ay.value()[i], by.value()[i], 1e-12);
        }
        // The RMS term is also offset-free, so the total matches.
        EXPECT_NEAR(depth_loss(VarD::constant(d), VarD::constant(g)).value().item(),
                    depth_loss(VarD::constant(d2), VarD::constant(g2)).value().item(), 1e-12);
    }
}

TEST(SegLoss, Examples) {
    const std::vector<int> labels{0, 1, 2, 1};
    EXPECT_NEAR(seg_loss(VarD::constant(Tensor4d(Shape{1, 3, 2, 2})), labels).value().item(), std::log(3.0), 1e-12);

    Tensor4d sat(Shape{1, 3, 2, 2});
    for (int i = 0; i < 4; ++i) sat.at(0, labels[i], i / 2, i % 2) = 20.0;
    EXPECT_LT(seg_loss(VarD::constant(sat), labels).value().item(), 1e-6);

    Tensor4d two(Shape{1, 2, 1, 2}, std::vector<double>{0, 0, 0, std::log(3.0)});
    const std::vector<int> truth{0, 1};
    EXPECT_NEAR(seg_loss(VarD::constant(two), truth).value().item(), (std::log(2.0) + std::log(4.0 / 3.0)) / 2, 1e-12);

    const std::vector<int> bad{0, 3, 1, 1};
    EXPECT_THROW(seg_loss(VarD::constant(Tensor4d(Shape{1, 3, 2, 2})), bad), DataError);
    const std::vector<int> negative{0, -1, 1, 1};
    EXPECT_THROW(seg_loss(VarD::constant(Tensor4d(Shape{1, 3, 2, 2})), negative), DataError);
}

TEST(SegLoss, DecreasesAsTrueLogitGrows) {
    for (int s = 0; s < 10; ++s) {
        Rng rng(300 + s);
        Tensor4d logits = random_tensor(Shape{1, 4, 3, 3}, rng, -2, 2);
        std::vector<int> labels(9);
        for (auto& l : labels) l = static_cast<int>(rng.below(4));
        double prev = seg_loss(VarD::constant(logits), labels).value().item();
        for (int step = 0; step < 10; ++step) {
            logits.at(0, labels[4], 1, 1) += 0.5;
            const double cur = seg_loss(VarD::constant(logits), labels).value().item();
            EXPECT_LT(cur, prev);
            prev = cur;
        }
    }
}

TEST(TotalLoss, Examples) {
    auto s = [](double v) { return VarD::constant(Tensor4d::scalar(v)); };
    EXPECT_EQ(total_loss<double>({s(0), s(0)}, {s(0)}, {}).value().item(), 0.0);
    EXPECT_NEAR(total_loss<double>({s(0.5)}, {s(1.0)}, {1.0, 0.1}).value().item(), 0.6, 1e-15);
    EXPECT_NEAR(total_loss<double>({s(1), s(2), s(3)}, {s(4), s(8)}, {2.0, 0.5}).value().item(), 2 * 2 + 0.5 * 6,
                1e-12);
    EXPECT_THROW(total_loss<double>({}, {s(1)}, {}), ContractError);
    EXPECT_THROW(total_loss<double>({s(1)}, {s(1)}, {-1.0, 0.1}), ParameterError);
}

TEST(TotalLoss, LinearInEachAggregate) {
    for (int i = 0; i < 20; ++i) {
        Rng rng(400 + i);
        std::vector<VarD> depth, seg;
        double seg_mean = 0;
        const int n = 1 + static_cast<int>(rng.below(9));
        for (int k = 0; k < n; ++k) {
            depth.push_back(VarD::constant(Tensor4d::scalar(rng.uniform(0, 3))));
            seg.push_back(VarD::constant(Tensor4d::scalar(rng.uniform(0, 3))));
            seg_mean += seg.back().value().item() / n;
        }
        const LossWeights w{rng.uniform(0, 2), rng.uniform(0, 2)};
        const LossWeights w2{w.alpha, 2 * w.beta_seg};
        const double a = total_loss(depth, seg, w).value().item();
        const double b = total_loss(depth, seg, w2).value().item();
        EXPECT_NEAR(b - a, seg_mean * w.beta_seg, 1e-12);
        const LossWeights a2{2 * w.alpha, w.beta_seg};
        EXPECT_NEAR(total_loss(depth, seg, a2).value().item() - a, a - seg_mean * w.beta_seg, 1e-12);
    }
}

TEST(LossGradients, MatchFiniteDifferences) {
    for (int i = 0; i < 20; ++i) {
        Rng rng(500 + i);
        const Shape shape{1, 1, 2 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(3))};
        const Tensor4d target = random_tensor(shape, rng, 0.1, 1.0);
        const Tensor4d pred = kink_free_prediction(target, rng);
        const Shape lshape{1, 3, shape.h, shape.w};
        std::vector<int> labels(shape.h * shape.w);
        for (auto& l : labels) l = static_cast<int>(rng.below(3));
        const LossWeights w{rng.uniform(0.5, 1.5), rng.uniform(0.05, 0.5)};

        ScalarFunction depth_fn = [&](std::span<const VarD> v) { return depth_loss(v[0], VarD::constant(target)); };
        const auto rd = check_gradients(depth_fn, {pred});
        EXPECT_LT(rd.max_relative_error, 1e-4) << "depth_loss seed " << 500 + i;

        ScalarFunction seg_fn = [&](std::span<const VarD> v) { return seg_loss(v[0], labels); };
        const auto rs = check_gradients(seg_fn, {random_tensor(lshape, rng, -2, 2)});
        EXPECT_LT(rs.max_relative_error, 1e-4) << "seg_loss seed " << 500 + i;

        ScalarFunction total_fn = [&](std::span<const VarD> v) {
            return total_loss<double>({depth_loss(v[0], VarD::constant(target)), depth_loss(v[1], VarD::constant(target))},
                                      {seg_loss(v[2], labels)}, w);
        };
        const Tensor4d pred2 = kink_free_prediction(target, rng);
        const auto rt = check_gradients(total_fn, {pred, pred2, random_tensor(lshape, rng, -2, 2)});
        EXPECT_LT(rt.max_relative_error, 1e-4) << "total_loss seed " << 500 + i;
    }
}

TEST(DownsampleLabels, Examples) {
    std::vector<int> labels(16);
    for (int i = 0; i < 16; ++i) labels[i] = i;
    EXPECT_EQ(downsample_labels(labels, 4, 4, 4, 4), labels);
    // Corner-aligned: output corners sample input corners.
    const auto two = downsample_labels(labels, 4, 4, 2, 2);
    EXPECT_EQ(two, (std::vector<int>{0, 3, 12, 15}));
    EXPECT_EQ(downsample_labels(labels, 4, 4, 1, 1), std::vector<int>{0});
    EXPECT_THROW(downsample_labels(labels, 4, 5, 2, 2), DimensionError);

    // Every output label is one of the input labels from the nearest block.
    std::vector<int> blocks(64 * 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) blocks[y * 64 + x] = (y / 16) * 4 + x / 16;
    const auto small = downsample_labels(blocks, 64, 64, 8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) EXPECT_EQ(small[y * 8 + x], (y / 2) * 4 + x / 2);
}
