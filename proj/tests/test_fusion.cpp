#include <gtest/gtest.h>

#include <cmath>

#include "egsa/fusion.hpp"
#include "test_util.hpp"

using namespace egsa;
using egsa::testing::random_tensor;

namespace {

using VarD = Var<double>;
const Tensor4d* const kNoEdges = nullptr;
const Tensor4* const kNoEdgesF = nullptr;

Tensor4d binary_edges(Shape s, Rng& rng, double p = 0.4) {
    Tensor4d e(Shape{1, 1, s.h, s.w});
    for (auto& v : e.data()) v = rng.uniform() < p ? 1.0 : 0.0;
    return e;
}

FusionScaleParams<float> float_params(int channels, std::uint64_t seed, float beta) {
    return init_fusion_params<float>(channels, 16, beta, seed, false);
}

void set_beta(FusionScaleParams<double>& p, double s2d, double d2s) {
    p.beta_s2d = VarD::constant(Tensor4d::scalar(s2d));
    p.beta_d2s = VarD::constant(Tensor4d::scalar(d2s));
}

}  // namespace

TEST(FusionVariant, ParseAndFlags) {
    for (auto v : all_fusion_variants()) EXPECT_EQ(parse_fusion_variant(to_string(v)), v);
    EXPECT_EQ(all_fusion_variants().size(), 5u);
    EXPECT_THROW(parse_fusion_variant("EGSA_CA"), ContractError);
    EXPECT_TRUE(uses_edges(FusionVariant::EgsaSa));
    EXPECT_FALSE(uses_edges(FusionVariant::ModestSa));
    EXPECT_FALSE(uses_spatial_attention(FusionVariant::ModestCa));
    EXPECT_TRUE(uses_channel_attention(FusionVariant::EgsaCaSa));
    EXPECT_EQ(bottleneck_channels(16, 16), 1);
    EXPECT_EQ(bottleneck_channels(4, 16), 1);
    EXPECT_EQ(bottleneck_channels(64, 16), 4);
}

TEST(SpatialAttention, Examples) {
    Rng rng(1);
    const auto f = VarD::constant(random_tensor(Shape{1, 3, 9, 9}, rng, -4, 4));
    SpatialAttentionWeights<double> zero{VarD::constant(Tensor4d(Shape{1, 2, 7, 7})),
                                         VarD::constant(Tensor4d(Shape{1, 1, 1, 1}))};
    const auto half = spatial_attention(f, zero).value();
    EXPECT_EQ(half.shape(), (Shape{1, 1, 9, 9}));
    for (double v : half.data()) EXPECT_EQ(v, 0.5);

    auto p = init_fusion_params<double>(3, 16, 0.0, 7, false);
    const auto s = spatial_attention(f, p.sa_seg).value();
    for (double v : s.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }

    // Constant features: every pixel whose 7x7 window stays inside the image sees the same input.
    const auto c = spatial_attention(VarD::constant(Tensor4d(Shape{1, 3, 11, 11}, 0.8)), p.sa_seg).value();
    for (int y = 3; y < 8; ++y)
        for (int x = 3; x < 8; ++x) EXPECT_EQ(c.at(0, 0, y, x), c.at(0, 0, 5, 5));
}

TEST(ChannelAttention, Examples) {
    Rng rng(2);
    const auto f = VarD::constant(random_tensor(Shape{1, 4, 5, 5}, rng));
    ChannelAttentionWeights<double> zero{VarD::constant(Tensor4d(Shape{1, 4, 1, 1})),
                                         VarD::constant(Tensor4d(Shape{1, 1, 1, 1})),
                                         VarD::constant(Tensor4d(Shape{4, 1, 1, 1})),
                                         VarD::constant(Tensor4d(Shape{1, 4, 1, 1}))};
    const auto w = channel_attention(f, zero).value();
    EXPECT_EQ(w.shape(), (Shape{1, 4, 1, 1}));
    for (double v : w.data()) EXPECT_EQ(v, 0.5);

    EXPECT_EQ(mul(f, VarD::constant(Tensor4d(Shape{1, 4, 1, 1}, 1.0))).value(), f.value());

    // Pooling is per channel: permuting channels permutes the pooled vector.
    Tensor4d perm(f.shape());
    const int order[] = {2, 0, 3, 1};
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) perm.at(0, c, y, x) = f.value().at(0, order[c], y, x);
    const auto pooled = global_avg_pool(f).value();
    const auto pooled_perm = global_avg_pool(VarD::constant(perm)).value();
    for (int c = 0; c < 4; ++c) EXPECT_EQ(pooled_perm[c], pooled[order[c]]);
}

TEST(EgsaGate, Examples) {
    Rng rng(3);
    const Shape s{1, 1, 4, 5};
    const auto ss = VarD::constant(random_tensor(s, rng, 0.01, 0.99));
    const auto sd = VarD::constant(random_tensor(s, rng, 0.01, 0.99));
    const auto beta = VarD::constant(Tensor4d::scalar(0.7));
    const auto zero_e = egsa_gate(ss, sd, Tensor4d(s), beta, beta);
    EXPECT_EQ(zero_e.seg.value(), ss.value());
    EXPECT_EQ(zero_e.depth.value(), sd.value());
    const auto zero_b = egsa_gate(ss, sd, binary_edges(s, rng), VarD::constant(Tensor4d::scalar(0.0)),
                                  VarD::constant(Tensor4d::scalar(0.0)));
    EXPECT_EQ(zero_b.seg.value(), ss.value());
    EXPECT_EQ(zero_b.depth.value(), sd.value());

    const auto half = VarD::constant(Tensor4d::scalar(0.5));
    const Tensor4d one_e(Shape{1, 1, 1, 1}, 1.0);
    EXPECT_EQ(egsa_gate(half, half, one_e, VarD::constant(Tensor4d::scalar(1.0)), beta).seg.value().item(), 1.0);
    EXPECT_EQ(egsa_gate(half, half, one_e, VarD::constant(Tensor4d::scalar(3.0)), beta).seg.value().item(), 2.0);

    EXPECT_THROW(egsa_gate(ss, sd, Tensor4d(Shape{1, 1, 4, 4}), beta, beta), DimensionError);
}

TEST(EgsaGate, NonNegativeForBetaAtLeastMinusOne) {
    for (int i = 0; i < 20; ++i) {
        Rng rng(30 + i);
        const Shape s{1, 1, 4, 4};
        const auto ss = VarD::constant(random_tensor(s, rng, 1e-6, 1.0));
        const auto b = VarD::constant(Tensor4d::scalar(rng.uniform(-1.0, 3.0)));
        const auto g = egsa_gate(ss, ss, binary_edges(s, rng, 0.5), b, b);
        for (double v : g.seg.value().data()) EXPECT_GE(v, 0.0);
    }
}

TEST(EgsaFuse, HandEvaluatedSinglePixel) {
    // S_s = sigmoid(0) = 0.5 and S_d = sigmoid(ln 4) = 0.8 via the attention biases.
    FusionScaleParams<double> p;
    p.sa_seg = {VarD::constant(Tensor4d(Shape{1, 2, 7, 7})), VarD::constant(Tensor4d::scalar(0.0))};
    p.sa_depth = {VarD::constant(Tensor4d(Shape{1, 2, 7, 7})), VarD::constant(Tensor4d::scalar(std::log(4.0)))};
    set_beta(p, 1.0, 0.5);
    const Tensor4d e(Shape{1, 1, 1, 1}, 1.0);
    const auto out = egsa_fuse(VarD::constant(Tensor4d::scalar(2.0)), VarD::constant(Tensor4d::scalar(10.0)), &e, p,
                               {FusionVariant::EgsaSa, true});
    EXPECT_NEAR(out.seg.value().item(), 2.4, 1e-12);
    EXPECT_NEAR(out.depth.value().item(), 10.0, 1e-12);
}

TEST(EgsaFuse, ReductionIdentityIsBitExact) {
    for (int i = 0; i < 20; ++i) {
        Rng rng(100 + i);
        const int C = 1 + static_cast<int>(rng.below(8));
        const Shape s{1, C, 2 + static_cast<int>(rng.below(7)), 2 + static_cast<int>(rng.below(7))};
        const auto fs = Var<float>::constant(random_tensor<float>(s, rng, -2, 2));
        const auto fd = Var<float>::constant(random_tensor<float>(s, rng, -2, 2));
        const Tensor4 edges = binary_edges(s, rng).cast<float>();
        const Tensor4 no_edges(Shape{1, 1, s.h, s.w});
        for (auto [egsa, modest] : {std::pair{FusionVariant::EgsaSa, FusionVariant::ModestSa},
                                    std::pair{FusionVariant::EgsaCaSa, FusionVariant::ModestCaSa}}) {
            const auto base = egsa_fuse(fs, fd, kNoEdgesF, float_params(C, i, 0.0f), {modest, true});
            auto p = float_params(C, i, static_cast<float>(rng.uniform(0.5, 2.0)));
            const auto e0 = egsa_fuse(fs, fd, &no_edges, p, {egsa, true});
            EXPECT_EQ(e0.seg.value(), base.seg.value());
            EXPECT_EQ(e0.depth.value(), base.depth.value());
            const auto b0 = egsa_fuse(fs, fd, &edges, float_params(C, i, 0.0f), {egsa, true});
            EXPECT_EQ(b0.seg.value(), base.seg.value());
            EXPECT_EQ(b0.depth.value(), base.depth.value());
        }
    }
}

TEST(EgsaFuse, ZeroFeaturesGiveZeroOutput) {
    const Shape s{1, 4, 4, 4};
    Rng rng(4);
    const Tensor4d edges = binary_edges(s, rng);
    for (auto v : all_fusion_variants()) {
        auto p = init_fusion_params<double>(4, 16, 0.5, 9, false);
        const auto z = VarD::constant(Tensor4d(s));
        const auto out = egsa_fuse(z, z, &edges, p, {v, true});
        EXPECT_EQ(out.seg.value(), Tensor4d(s)) << to_string(v);
        EXPECT_EQ(out.depth.value(), Tensor4d(s)) << to_string(v);
    }
}

TEST(EgsaFuse, CrossModulationDirection) {
    Rng rng(5);
    const Shape s{1, 3, 5, 5};
    const auto fs = VarD::constant(random_tensor(s, rng));
    const auto fd = VarD::constant(random_tensor(s, rng));
    const Tensor4d edges = binary_edges(s, rng);
    auto p = init_fusion_params<double>(3, 16, 0.4, 11, false);
    const auto base = egsa_fuse(fs, fd, &edges, p, {FusionVariant::EgsaSa, true});

    auto pd = p;  // perturb S_d only
    pd.sa_depth.bias = VarD::constant(Tensor4d::scalar(p.sa_depth.bias.value().item() + 0.3));
    const auto a = egsa_fuse(fs, fd, &edges, pd, {FusionVariant::EgsaSa, true});
    EXPECT_NE(a.seg.value(), base.seg.value());
    EXPECT_EQ(a.depth.value(), base.depth.value());

    auto ps = p;  // perturb S_s only
    ps.sa_seg.bias = VarD::constant(Tensor4d::scalar(p.sa_seg.bias.value().item() + 0.3));
    const auto b = egsa_fuse(fs, fd, &edges, ps, {FusionVariant::EgsaSa, true});
    EXPECT_EQ(b.seg.value(), base.seg.value());
    EXPECT_NE(b.depth.value(), base.depth.value());

    // Same-branch diagnostics mode swaps which map scales which branch.
    const auto same = egsa_fuse(fs, fd, &edges, pd, {FusionVariant::EgsaSa, false});
    EXPECT_EQ(same.seg.value(), egsa_fuse(fs, fd, &edges, p, {FusionVariant::EgsaSa, false}).seg.value());
}

TEST(EgsaFuse, ModestCaExchangesChannelWeightedFeatures) {
    Rng rng(6);
    const Shape s{1, 4, 3, 3};
    const auto fs = VarD::constant(random_tensor(s, rng));
    const auto fd = VarD::constant(random_tensor(s, rng));
    auto p = init_fusion_params<double>(4, 16, 0.0, 12, false);
    const auto out = egsa_fuse(fs, fd, kNoEdges, p, {FusionVariant::ModestCa, true});
    EXPECT_EQ(out.seg.value(), mul(fd, channel_attention(fd, p.ca_depth)).value());
    EXPECT_EQ(out.depth.value(), mul(fs, channel_attention(fs, p.ca_seg)).value());
}

TEST(EgsaFuse, Errors) {
    auto p = init_fusion_params<double>(2, 16, 0.0, 1, false);
    const auto f = VarD::constant(Tensor4d(Shape{1, 2, 4, 4}));
    EXPECT_THROW(egsa_fuse(f, f, kNoEdges, p, {FusionVariant::EgsaSa, true}), ContractError);
    const Tensor4d wrong(Shape{1, 1, 3, 4});
    EXPECT_THROW(egsa_fuse(f, f, &wrong, p, {FusionVariant::EgsaSa, true}), DimensionError);
    EXPECT_THROW(egsa_fuse(f, VarD::constant(Tensor4d(Shape{1, 2, 4, 5})), kNoEdges, p, {FusionVariant::ModestSa, true}),
                 DimensionError);
    EXPECT_THROW(egsa_fuse(f, f, kNoEdges, p, {static_cast<FusionVariant>(42), true}), ContractError);
}

TEST(FusionBackward, MatchesFiniteDifferencesForEveryVariant) {
    for (auto v : all_fusion_variants()) {
        for (int i = 0; i < 20; ++i) {
            FusionCheckInstance inst;
            inst.variant = v;
            inst.seed = 500 + i;
            inst.channels = 1 + i % 8;
            inst.height = 2 + i % 3;
            inst.width = 4 - i % 3;
            const auto r = fusion_backward_check(inst);
            EXPECT_LT(r.max_relative_error, 1e-4) << to_string(v) << " seed " << inst.seed << " input "
                                                  << r.input_index << " analytic " << r.analytic << " numeric "
                                                  << r.numeric;
        }
    }
}

TEST(FusionBackward, BetaGradientVanishesWithoutEdges) {
    Rng rng(7);
    const Shape s{1, 3, 4, 4};
    auto p = init_fusion_params<double>(3, 16, 0.0, 13, true);
    set_beta(p, 0.6, 0.9);
    p.beta_s2d = VarD::leaf(p.beta_s2d.value());
    p.beta_d2s = VarD::leaf(p.beta_d2s.value());
    const auto fs = VarD::leaf(random_tensor(s, rng));
    const auto fd = VarD::leaf(random_tensor(s, rng));
    const Tensor4d none(Shape{1, 1, 4, 4});
    const auto out = egsa_fuse(fs, fd, &none, p, {FusionVariant::EgsaSa, true});
    backward(add(egsa::testing::probe(out.seg, 1), egsa::testing::probe(out.depth, 2)));
    EXPECT_EQ(p.beta_s2d.grad().item(), 0.0);
    EXPECT_EQ(p.beta_d2s.grad().item(), 0.0);

    FusionCheckInstance inst;
    inst.zero_edges = true;
    EXPECT_LT(fusion_backward_check(inst).max_relative_error, 1e-4);
}

TEST(FusionBackward, SegFeatureGradientIsGatedDepthMap) {
    Rng rng(8);
    const Shape s{1, 3, 4, 4};
    auto p = init_fusion_params<double>(3, 16, 0.0, 14, false);
    set_beta(p, 0.8, 1.3);
    const auto fs = VarD::leaf(random_tensor(s, rng));
    const auto fd = VarD::constant(random_tensor(s, rng));
    const Tensor4d edges = binary_edges(s, rng);
    const auto out = egsa_fuse(fs, fd, &edges, p, {FusionVariant::EgsaSa, true});
    backward(sum(out.seg));
    const auto gated =
        egsa_gate(spatial_attention(fs, p.sa_seg), spatial_attention(fd, p.sa_depth), edges, p.beta_s2d, p.beta_d2s);
    const Tensor4d g = fs.grad();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(g.at(0, c, y, x), gated.depth.value().at(0, 0, y, x));
}
