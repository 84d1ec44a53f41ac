#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egsa/config.hpp"
#include "egsa/edges.hpp"
#include "egsa/fusion.hpp"
#include "egsa/rng.hpp"

namespace egsa {

struct ModelConfig {
    int height = 64;
    int width = 64;
    std::vector<int> enc_channels{16, 32, 64};
    int dec_channels = 16;
    int num_scales = 3;
    int iterations = 3;
    int num_classes = 3;
    FusionVariant variant = FusionVariant::EgsaSa;
    bool cross = true;
    int reduction = 16;
    float beta_init = 0.0f;

    static ModelConfig from(const RunConfig& config);
    /// Throws ParameterError for inconsistent settings.
    void validate() const;
    /// (H_k, W_k) of each decoder scale, coarsest first. Scale k sits at 1 / 2^(num_scales - k).
    std::vector<std::pair<int, int>> scale_dims() const;
};

enum class ParamGroup { Encoder, Decoder };

struct Parameter {
    std::string name;
    ParamGroup group = ParamGroup::Encoder;
    Tensor4 value;
};

/// One supervised output: a depth map (softplus, > 0) and class logits at (height, width).
struct Prediction {
    int height = 0;
    int width = 0;
    Var<float> depth;
    Var<float> logits;
};

struct ModelOutput {
    /// Iteration-major; within an iteration the decoder scales coarsest first, then full resolution.
    std::vector<Prediction> predictions;
    const Prediction& final() const { return predictions.back(); }
};

/// Shared strided encoder, two decoder branches (segmentation, depth) refined over
/// several iterations, with gated recurrent blending and edge-guided fusion at every scale.
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::size_t index_of(const std::string& name) const;

    /// Fresh graph leaves for every parameter, in parameters() order.
    std::vector<Var<float>> bind(bool requires_grad) const;

    /// `rgb` is (1, 3, H, W). `edges` must be non-null for EGSA variants.
    ModelOutput forward(const std::vector<Var<float>>& bound, const Tensor4& rgb, const EdgePyramid* edges) const;
    /// Inference without graph recording.
    ModelOutput predict(const Tensor4& rgb, const EdgePyramid* edges) const;

private:
    void add_param(const std::string& name, ParamGroup group, Shape shape, double bound, Rng& rng);
    void add_filled(const std::string& name, ParamGroup group, Shape shape, float value);

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace egsa
