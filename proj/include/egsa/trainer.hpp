#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egsa/config.hpp"
#include "egsa/losses.hpp"
#include "egsa/metrics.hpp"
#include "egsa/model.hpp"
#include "egsa/scenes.hpp"

namespace egsa {

/// Which edge map feeds the fusion gates in a given epoch. None for MODEST variants.
enum class EdgeMode { None, RGB, Depth, Blend };
std::string to_string(EdgeMode mode);

/// RGB edges for epochs t < T, then (optionally) `blend_epochs` of RGB/depth mixing,
/// then edges of the model's own depth prediction.
struct Schedule {
    int warmup_T = 5;
    int blend_epochs = 0;

    EdgeMode mode_at(int epoch, bool uses_edges) const;
    /// Mode used for evaluation after `epochs_trained` epochs: the last trained
    /// epoch's mode, or the epoch-0 mode for an untrained model.
    EdgeMode terminal_mode(int epochs_trained, bool uses_edges) const;
    /// Weight of the RGB map during blending epochs, in (0, 1).
    double blend_weight(int epoch) const;
};

/// Edge pyramid for one sample. Depth and Blend modes run a no-grad bootstrap forward
/// (zero edge maps) and take edges of the predicted depth.
EdgePyramid edges_for_sample(const Model& model, const Tensor4& rgb, EdgeMode mode, const CannyParams& canny,
                             double blend_weight = 0.5);
/// Convenience over Schedule::mode_at. Returns an empty pyramid for MODEST variants.
EdgePyramid edge_source(int epoch, const Schedule& schedule, const Model& model, const Tensor4& rgb,
                        const CannyParams& canny);

struct AdamConfig {
    double lr_encoder = 1e-5;
    double lr_decoder = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor4> m;
    std::vector<Tensor4> v;
    std::uint64_t step = 0;

    static AdamState zeros_like(const std::vector<Parameter>& params);
};

/// One bias-corrected Adam update. Encoder parameters use lr_encoder, everything else
/// (decoder, heads, fusion weights and betas) lr_decoder. A non-finite gradient throws
/// TrainingError naming the parameter before anything is modified.
void adam_step(std::vector<Parameter>& params, const std::vector<Tensor4>& grads, AdamState& state,
               const AdamConfig& config);

struct TrainOptions {
    int epochs = 20;
    int batch = 4;
    std::uint64_t seed = 0;
    int threads = 1;
    bool eval_each_epoch = false;
    Schedule schedule;
    CannyParams canny;
    LossWeights loss;
    AdamConfig adam;

    static TrainOptions from(const RunConfig& config);
};

struct TrainState {
    int epochs_done = 0;
    AdamState adam;
    std::uint64_t rng_state = 0;
};

/// Everything needed to resume or evaluate: resolved config, weights, optimizer state.
struct TrainingRun {
    RunConfig config;
    Model model;
    TrainState state;

    /// Fresh run: weights and the shuffling stream both derive from train.seed.
    static TrainingRun create(const RunConfig& config);
    TrainOptions options() const { return TrainOptions::from(config); }
};

struct EpochLog {
    int epoch = 0;
    EdgeMode edge_mode = EdgeMode::None;
    double train_loss = 0.0;
    std::optional<MetricReport> test;
};

/// Loss over every prediction (all iterations and scales) against resampled targets.
Var<float> sample_objective(const Model& model, const std::vector<Var<float>>& bound, const Scene& scene,
                            const EdgePyramid* edges, const LossWeights& weights);

struct SampleGradients {
    double loss = 0.0;
    std::vector<Tensor4> grads;  // parameters() order
};
SampleGradients sample_gradients(const Model& model, const Scene& scene, const EdgePyramid* edges,
                                 const LossWeights& weights);

/// Mean objective over `scenes` without updating anything, using the given epoch's edge mode.
double dataset_loss(const TrainingRun& run, std::span<const Scene> scenes, int epoch);

/// Runs one epoch (shuffle, mini-batches, Adam) and advances the state.
EpochLog train_epoch(TrainingRun& run, std::span<const Scene> train);

/// Trains until train.epochs are done. `test` may be empty; with train.eval_each_epoch
/// each log carries a test report.
std::vector<EpochLog> train(TrainingRun& run, std::span<const Scene> train, std::span<const Scene> test,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

struct Evaluation {
    MetricReport report;
    EdgeMode edge_mode = EdgeMode::None;
};

/// Test-set metrics with the terminal edge source of the run.
Evaluation evaluate(const TrainingRun& run, std::span<const Scene> test,
                    EmptyTransparentPolicy policy = EmptyTransparentPolicy::ReportMissing);

/// "epoch,edge_source,train_loss,delta_105,..." one row per epoch; NA where not evaluated.
const std::string& epoch_log_header();
std::string epoch_log_row(const EpochLog& log);

// Checkpoint file: "EGSA", version, config hash, config text, train state, named
// float blocks for weights and Adam moments, CRC32 trailer. Little-endian throughout.
std::vector<std::uint8_t> encode_checkpoint(const TrainingRun& run);
/// Throws CheckpointError on corruption; FormatError on truncation.
TrainingRun decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainingRun& run, const std::filesystem::path& path);
/// With `expected`, a config whose hash differs from the stored one is a CheckpointError.
TrainingRun load_checkpoint(const std::filesystem::path& path, const RunConfig* expected = nullptr);

}  // namespace egsa
