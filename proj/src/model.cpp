#include "egsa/model.hpp"

#include <cmath>

#include "egsa/errors.hpp"

namespace egsa {

namespace {

// softplus(b) == 2: outputs start near the middle of the scene depth range.
constexpr float kDepthBiasInit = 1.8545865f;

std::string scale_name(const std::string& prefix, int k) { return prefix + "." + std::to_string(k); }

}  // namespace

ModelConfig ModelConfig::from(const RunConfig& c) {
    ModelConfig m;
    m.height = static_cast<int>(c.get_int("model.height"));
    m.width = static_cast<int>(c.get_int("model.width"));
    m.enc_channels = c.get_int_list("model.enc_channels");
    m.dec_channels = static_cast<int>(c.get_int("model.dec_channels"));
    m.num_scales = static_cast<int>(c.get_int("model.num_scales"));
    m.iterations = static_cast<int>(c.get_int("model.iterations"));
    m.num_classes = static_cast<int>(c.get_int("model.classes"));
    m.variant = parse_fusion_variant(c.get("fusion.variant"));
    m.cross = c.get_bool("fusion.cross");
    m.reduction = static_cast<int>(c.get_int("fusion.reduction"));
    m.beta_init = static_cast<float>(c.get_double("fusion.beta_init"));
    m.validate();
    return m;
}

void ModelConfig::validate() const {
    if (num_scales < 1) throw ParameterError("model.num_scales must be >= 1");
    if (static_cast<int>(enc_channels.size()) != num_scales) {
        throw ParameterError("model.enc_channels needs one entry per scale (" + std::to_string(num_scales) + ")");
    }
    for (int c : enc_channels)
        if (c < 1) throw ParameterError("model.enc_channels entries must be positive");
    if (dec_channels < 1) throw ParameterError("model.dec_channels must be positive");
    if (iterations < 1) throw ParameterError("model.iterations must be >= 1");
    if (num_classes < 2) throw ParameterError("model.classes must be >= 2");
    if (reduction < 1) throw ParameterError("fusion.reduction must be >= 1");
    const int factor = 1 << num_scales;
    if (height < factor || width < factor || height % factor != 0 || width % factor != 0) {
        throw ParameterError("model input " + std::to_string(height) + "x" + std::to_string(width) +
                             " must be divisible by " + std::to_string(factor));
    }
}

std::vector<std::pair<int, int>> ModelConfig::scale_dims() const {
    std::vector<std::pair<int, int>> dims;
    for (int k = 0; k < num_scales; ++k) {
        const int f = 1 << (num_scales - k);
        dims.emplace_back(height / f, width / f);
    }
    return dims;
}

void Model::add_param(const std::string& name, ParamGroup group, Shape shape, double bound, Rng& rng) {
    Tensor4 t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
    index_.emplace(name, params_.size());
    params_.push_back({name, group, std::move(t)});
}

void Model::add_filled(const std::string& name, ParamGroup group, Shape shape, float value) {
    index_.emplace(name, params_.size());
    params_.push_back({name, group, Tensor4::full(shape, value)});
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int C = config_.dec_channels;
    const int S = config_.num_scales;
    auto conv = [&](const std::string& name, ParamGroup g, int oc, int ic, int k) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(ic * k * k));
        add_param(name + ".weight", g, Shape{oc, ic, k, k}, bound, rng);
        add_param(name + ".bias", g, Shape{1, oc, 1, 1}, bound, rng);
    };

    int in = 3;
    for (int s = 0; s < S; ++s) {
        conv(scale_name("encoder", s), ParamGroup::Encoder, config_.enc_channels[s], in, 3);
        in = config_.enc_channels[s];
    }

    const auto D = ParamGroup::Decoder;
    const FusionVariant v = config_.variant;
    const int hidden = bottleneck_channels(C, config_.reduction);
    for (int k = 0; k < S; ++k) {
        const int enc_c = config_.enc_channels[S - 1 - k];
        for (const char* branch : {"seg", "depth"}) {
            const std::string b(branch);
            conv(scale_name("lateral." + b, k), D, C, enc_c, 1);
            conv(scale_name("decoder." + b, k), D, C, C, 3);
            if (config_.iterations > 1) conv(scale_name("gate." + b, k), D, C, 2 * C, 1);
        }
        const std::string f = scale_name("fusion", k);
        if (uses_edges(v)) {
            add_filled(f + ".beta_s2d", D, Shape{1, 1, 1, 1}, config_.beta_init);
            add_filled(f + ".beta_d2s", D, Shape{1, 1, 1, 1}, config_.beta_init);
        }
        for (const char* branch : {"seg", "depth"}) {
            const std::string b(branch);
            if (uses_channel_attention(v)) {
                conv(f + ".ca_" + b + ".fc1", D, hidden, C, 1);
                conv(f + ".ca_" + b + ".fc2", D, C, hidden, 1);
            }
            if (uses_spatial_attention(v)) conv(f + ".sa_" + b, D, 1, 2, 7);
        }
    }
    conv("head.depth", D, 1, C, 1);
    params_[index_of("head.depth.bias")].value.fill(kDepthBiasInit);
    conv("head.seg", D, config_.num_classes, C, 1);
}

std::size_t Model::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("model has no parameter '" + name + "'");
    return it->second;
}

std::vector<Var<float>> Model::bind(bool requires_grad) const {
    std::vector<Var<float>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(Var<float>::leaf(p.value, requires_grad));
    return out;
}

ModelOutput Model::forward(const std::vector<Var<float>>& bound, const Tensor4& rgb, const EdgePyramid* edges) const {
    if (bound.size() != params_.size()) throw ContractError("Model::forward: bound parameter count mismatch");
    if (rgb.shape() != Shape{1, 3, config_.height, config_.width}) {
        throw DimensionError("Model::forward: expected input (1, 3, " + std::to_string(config_.height) + ", " +
                             std::to_string(config_.width) + "), got " + rgb.shape().str());
    }
    const int S = config_.num_scales;
    const FusionVariant v = config_.variant;
    if (uses_edges(v)) {
        if (edges == nullptr) throw ContractError("Model::forward: " + to_string(v) + " requires an edge pyramid");
        if (static_cast<int>(edges->levels.size()) != S) {
            throw DimensionError("Model::forward: edge pyramid has " + std::to_string(edges->levels.size()) +
                                 " levels, model has " + std::to_string(S) + " scales");
        }
    }
    auto P = [&](const std::string& name) -> const Var<float>& { return bound[index_of(name)]; };
    auto conv = [&](const Var<float>& x, const std::string& name, int stride, int pad) {
        return conv2d(x, P(name + ".weight"), P(name + ".bias"), stride, pad);
    };

    std::vector<Var<float>> enc;
    Var<float> x = Var<float>::constant(rgb);
    for (int s = 0; s < S; ++s) {
        x = relu(conv(x, scale_name("encoder", s), 2, 1));
        enc.push_back(x);
    }

    std::vector<FusionScaleParams<float>> fparams(S);
    for (int k = 0; k < S; ++k) {
        const std::string f = scale_name("fusion", k);
        auto& fp = fparams[k];
        if (uses_edges(v)) {
            fp.beta_s2d = P(f + ".beta_s2d");
            fp.beta_d2s = P(f + ".beta_d2s");
        }
        if (uses_channel_attention(v)) {
            fp.ca_seg = {P(f + ".ca_seg.fc1.weight"), P(f + ".ca_seg.fc1.bias"), P(f + ".ca_seg.fc2.weight"),
                         P(f + ".ca_seg.fc2.bias")};
            fp.ca_depth = {P(f + ".ca_depth.fc1.weight"), P(f + ".ca_depth.fc1.bias"),
                           P(f + ".ca_depth.fc2.weight"), P(f + ".ca_depth.fc2.bias")};
        }
        if (uses_spatial_attention(v)) {
            fp.sa_seg = {P(f + ".sa_seg.weight"), P(f + ".sa_seg.bias")};
            fp.sa_depth = {P(f + ".sa_depth.weight"), P(f + ".sa_depth.bias")};
        }
    }

    std::vector<Var<float>> lat_s(S), lat_d(S);
    for (int k = 0; k < S; ++k) {
        lat_s[k] = conv(enc[S - 1 - k], scale_name("lateral.seg", k), 1, 0);
        lat_d[k] = conv(enc[S - 1 - k], scale_name("lateral.depth", k), 1, 0);
    }

    const FusionOptions options{v, config_.cross};
    const auto dims = config_.scale_dims();
    auto heads = [&](const Var<float>& ys, const Var<float>& yd, int h, int w) {
        return Prediction{h, w, softplus(conv(yd, "head.depth", 1, 0)), conv(ys, "head.seg", 1, 0)};
    };

    ModelOutput out;
    std::vector<Var<float>> prev_s(S), prev_d(S);
    Var<float> carry_s, carry_d;
    for (int it = 0; it < config_.iterations; ++it) {
        for (int k = 0; k < S; ++k) {
            const auto [h, w] = dims[k];
            Var<float> xs = lat_s[k];
            Var<float> xd = lat_d[k];
            // Within an iteration the carry flows coarse to fine; across iterations the
            // finest state feeds back into the coarsest scale.
            if (carry_s.valid()) {
                xs = add(xs, resize_bilinear(carry_s, h, w));
                xd = add(xd, resize_bilinear(carry_d, h, w));
            }
            xs = relu(conv(xs, scale_name("decoder.seg", k), 1, 1));
            xd = relu(conv(xd, scale_name("decoder.depth", k), 1, 1));
            if (it > 0) {
                const Var<float> gs = sigmoid(conv(concat_channels<float>({prev_s[k], xs}), scale_name("gate.seg", k), 1, 0));
                const Var<float> gd =
                    sigmoid(conv(concat_channels<float>({prev_d[k], xd}), scale_name("gate.depth", k), 1, 0));
                xs = gated_blend(gs, xs, prev_s[k]);
                xd = gated_blend(gd, xd, prev_d[k]);
            }
            prev_s[k] = xs;
            prev_d[k] = xd;
            const Tensor4* e = uses_edges(v) ? &edges->levels[k] : nullptr;
            const auto fused = egsa_fuse(xs, xd, e, fparams[k], options);
            carry_s = add(xs, fused.seg);
            carry_d = add(xd, fused.depth);
            out.predictions.push_back(heads(carry_s, carry_d, h, w));
        }
        const int H = config_.height, W = config_.width;
        out.predictions.push_back(heads(resize_bilinear(carry_s, H, W), resize_bilinear(carry_d, H, W), H, W));
    }
    return out;
}

ModelOutput Model::predict(const Tensor4& rgb, const EdgePyramid* edges) const {
    NoGradGuard guard;
    return forward(bind(false), rgb, edges);
}

}  // namespace egsa
