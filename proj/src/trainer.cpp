#include "egsa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <thread>

#include "egsa/errors.hpp"
#include "egsa/image_io.hpp"
#include "egsa/rng.hpp"

namespace egsa {

std::string to_string(EdgeMode mode) {
    switch (mode) {
        case EdgeMode::None: return "none";
        case EdgeMode::RGB: return "RGB";
        case EdgeMode::Depth: return "Depth";
        case EdgeMode::Blend: return "Blend";
    }
    return "?";
}

EdgeMode Schedule::mode_at(int epoch, bool uses_edges) const {
    if (!uses_edges) return EdgeMode::None;
    if (epoch < warmup_T) return EdgeMode::RGB;
    if (epoch < warmup_T + blend_epochs) return EdgeMode::Blend;
    return EdgeMode::Depth;
}

EdgeMode Schedule::terminal_mode(int epochs_trained, bool uses_edges) const {
    return mode_at(epochs_trained > 0 ? epochs_trained - 1 : 0, uses_edges);
}

double Schedule::blend_weight(int epoch) const {
    const int j = std::clamp(epoch - warmup_T, 0, std::max(blend_epochs - 1, 0));
    return 1.0 - static_cast<double>(j + 1) / (blend_epochs + 1);
}

namespace {

Tensor4 canny_rgb(const Tensor4& rgb, const CannyParams& params) { return canny(rgb_to_gray(rgb), params); }

}  // namespace

EdgePyramid edges_for_sample(const Model& model, const Tensor4& rgb, EdgeMode mode, const CannyParams& canny,
                             double blend_weight) {
    const auto dims = model.config().scale_dims();
    if (mode == EdgeMode::None) return {};
    if (mode == EdgeMode::RGB) return build_pyramid(canny_rgb(rgb, canny), dims, EdgeSource::RGB);

    EdgePyramid bootstrap{{}, EdgeSource::Depth};
    for (const auto& [h, w] : dims) bootstrap.levels.push_back(Tensor4::zeros(Shape{1, 1, h, w}));
    const Tensor4 depth = model.predict(rgb, &bootstrap).final().depth.value();
    Tensor4 edges = depth_to_edges(depth, canny);
    if (mode == EdgeMode::Blend) {
        const Tensor4 rgb_edges = canny_rgb(rgb, canny);
        for (std::size_t i = 0; i < edges.size(); ++i) {
            const double mixed = blend_weight * rgb_edges[i] + (1.0 - blend_weight) * edges[i];
            edges[i] = mixed >= 0.5 ? 1.0f : 0.0f;
        }
    }
    return build_pyramid(edges, dims, EdgeSource::Depth);
}

EdgePyramid edge_source(int epoch, const Schedule& schedule, const Model& model, const Tensor4& rgb,
                        const CannyParams& canny) {
    const EdgeMode mode = schedule.mode_at(epoch, uses_edges(model.config().variant));
    return edges_for_sample(model, rgb, mode, canny, schedule.blend_weight(epoch));
}

AdamState AdamState::zeros_like(const std::vector<Parameter>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.push_back(Tensor4::zeros(p.value.shape()));
        s.v.push_back(Tensor4::zeros(p.value.shape()));
    }
    return s;
}

void adam_step(std::vector<Parameter>& params, const std::vector<Tensor4>& grads, AdamState& state,
               const AdamConfig& config) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw ContractError("adam_step: parameter, gradient and moment counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].value.shape()) {
            throw DimensionError("adam_step: gradient shape " + grads[i].shape().str() + " for parameter " +
                                 params[i].name + " " + params[i].value.shape().str());
        }
        if (!grads[i].all_finite()) throw TrainingError("non-finite gradient in parameter " + params[i].name);
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double lr = params[i].group == ParamGroup::Encoder ? config.lr_encoder : config.lr_decoder;
        Tensor4& p = params[i].value;
        Tensor4& m = state.m[i];
        Tensor4& v = state.v[i];
        const Tensor4& g = grads[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j];
            const double mj = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            const double vj = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            p[j] = static_cast<float>(p[j] - lr * (mj / c1) / (std::sqrt(vj / c2) + config.eps));
        }
    }
}

TrainOptions TrainOptions::from(const RunConfig& c) {
    TrainOptions o;
    o.epochs = static_cast<int>(c.get_int("train.epochs"));
    o.batch = static_cast<int>(c.get_int("train.batch"));
    o.seed = c.get_u64("train.seed");
    o.threads = static_cast<int>(c.get_int("train.threads"));
    o.eval_each_epoch = c.get_bool("train.eval_each_epoch");
    o.schedule.warmup_T = static_cast<int>(c.get_int("schedule.T"));
    o.schedule.blend_epochs = static_cast<int>(c.get_int("schedule.blend_epochs"));
    o.canny = {c.get_double("edges.sigma"), c.get_double("edges.low"), c.get_double("edges.high")};
    o.loss = {c.get_double("loss.alpha"), c.get_double("loss.beta_seg")};
    o.adam = {c.get_double("optim.lr_encoder"), c.get_double("optim.lr_decoder"), c.get_double("optim.beta1"),
              c.get_double("optim.beta2"), c.get_double("optim.eps")};
    if (o.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (o.batch < 1) throw ConfigError("train.batch must be >= 1");
    if (o.threads < 1) throw ConfigError("train.threads must be >= 1");
    if (o.schedule.warmup_T < 0 || o.schedule.blend_epochs < 0) {
        throw ConfigError("schedule.T and schedule.blend_epochs must be >= 0");
    }
    if (o.adam.lr_encoder < 0 || o.adam.lr_decoder < 0) throw ConfigError("learning rates must be >= 0");
    if (!(o.adam.beta1 >= 0 && o.adam.beta1 < 1 && o.adam.beta2 >= 0 && o.adam.beta2 < 1 && o.adam.eps > 0)) {
        throw ConfigError("Adam needs 0 <= beta1, beta2 < 1 and eps > 0");
    }
    if (o.loss.alpha < 0 || o.loss.beta_seg < 0) throw ConfigError("loss weights must be >= 0");
    if (!(o.canny.sigma > 0 && o.canny.low > 0 && o.canny.low < o.canny.high)) {
        throw ConfigError("edges: need sigma > 0 and 0 < low < high");
    }
    return o;
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x53485546464c45ULL;

}  // namespace

TrainingRun TrainingRun::create(const RunConfig& config) {
    const TrainOptions opts = TrainOptions::from(config);
    TrainingRun run{config, Model(ModelConfig::from(config), opts.seed), {}};
    run.state.adam = AdamState::zeros_like(run.model.parameters());
    run.state.rng_state = Rng(opts.seed ^ kShuffleStream).state();
    return run;
}

Var<float> sample_objective(const Model& model, const std::vector<Var<float>>& bound, const Scene& scene,
                            const EdgePyramid* edges, const LossWeights& weights) {
    const ModelOutput out = model.forward(bound, scene.rgb, edges);
    const int H = scene.height(), W = scene.width();
    std::map<std::pair<int, int>, std::pair<Var<float>, std::vector<int>>> targets;
    std::vector<Var<float>> depth_terms, seg_terms;
    for (const auto& p : out.predictions) {
        auto key = std::make_pair(p.height, p.width);
        auto it = targets.find(key);
        if (it == targets.end()) {
            auto depth = (p.height == H && p.width == W) ? scene.depth_gt
                                                         : resize_bilinear(scene.depth_gt, p.height, p.width);
            auto labels = downsample_labels(scene.seg_gt, H, W, p.height, p.width);
            it = targets.emplace(key, std::make_pair(Var<float>::constant(std::move(depth)), std::move(labels))).first;
        }
        depth_terms.push_back(depth_loss(p.depth, it->second.first));
        seg_terms.push_back(seg_loss(p.logits, std::span<const int>(it->second.second)));
    }
    return total_loss(depth_terms, seg_terms, weights);
}

SampleGradients sample_gradients(const Model& model, const Scene& scene, const EdgePyramid* edges,
                                 const LossWeights& weights) {
    const auto bound = model.bind(true);
    const Var<float> loss = sample_objective(model, bound, scene, edges, weights);
    SampleGradients out;
    out.loss = loss.value().item();
    if (!std::isfinite(out.loss)) throw TrainingError("non-finite loss on sample with seed " + std::to_string(scene.seed));
    backward(loss);
    out.grads.reserve(bound.size());
    for (const auto& b : bound) out.grads.push_back(b.grad());
    return out;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be written to
// per-index slots so the outcome does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

double dataset_loss(const TrainingRun& run, std::span<const Scene> scenes, int epoch) {
    const TrainOptions opts = run.options();
    const EdgeMode mode = opts.schedule.mode_at(epoch, uses_edges(run.model.config().variant));
    std::vector<double> losses(scenes.size());
    parallel_for(scenes.size(), opts.threads, [&](std::size_t i) {
        NoGradGuard guard;
        const auto edges =
            edges_for_sample(run.model, scenes[i].rgb, mode, opts.canny, opts.schedule.blend_weight(epoch));
        losses[i] = sample_objective(run.model, run.model.bind(false), scenes[i], &edges, opts.loss).value().item();
    });
    if (losses.empty()) return 0.0;
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
}

EpochLog train_epoch(TrainingRun& run, std::span<const Scene> train) {
    if (train.empty()) throw DataError("training set is empty");
    const TrainOptions opts = run.options();
    const int epoch = run.state.epochs_done;
    const EdgeMode mode = opts.schedule.mode_at(epoch, uses_edges(run.model.config().variant));
    const double blend = opts.schedule.blend_weight(epoch);

    Rng rng;
    rng.set_state(run.state.rng_state);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    auto& params = run.model.parameters();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(opts.batch), order.size() - start);
        std::vector<SampleGradients> results(count);
        parallel_for(count, opts.threads, [&](std::size_t i) {
            const Scene& scene = train[order[start + i]];
            const auto edges = edges_for_sample(run.model, scene.rgb, mode, opts.canny, blend);
            results[i] = sample_gradients(run.model, scene, &edges, opts.loss);
        });
        std::vector<Tensor4> grads;
        for (const auto& p : params) grads.push_back(Tensor4::zeros(p.value.shape()));
        const double inv = 1.0 / static_cast<double>(count);
        for (std::size_t i = 0; i < count; ++i) {
            loss_sum += results[i].loss;
            for (std::size_t k = 0; k < grads.size(); ++k) {
                Tensor4& g = grads[k];
                const Tensor4& s = results[i].grads[k];
                for (std::size_t j = 0; j < g.size(); ++j) g[j] += static_cast<float>(s[j] * inv);
            }
        }
        adam_step(params, grads, run.state.adam, opts.adam);
    }
    run.state.rng_state = rng.state();
    run.state.epochs_done += 1;
    return EpochLog{epoch, mode, loss_sum / static_cast<double>(train.size()), std::nullopt};
}

std::vector<EpochLog> train(TrainingRun& run, std::span<const Scene> train, std::span<const Scene> test,
                            const std::function<void(const EpochLog&)>& on_epoch) {
    const TrainOptions opts = run.options();
    std::vector<EpochLog> logs;
    while (run.state.epochs_done < opts.epochs) {
        EpochLog log = train_epoch(run, train);
        if (opts.eval_each_epoch && !test.empty()) log.test = evaluate(run, test).report;
        if (on_epoch) on_epoch(log);
        logs.push_back(std::move(log));
    }
    return logs;
}

namespace {

Tensor4 softmax_channels(const Tensor4& logits) {
    Tensor4 out(logits.shape());
    const int N = logits.channels();
    for (int n = 0; n < logits.batch(); ++n)
        for (int y = 0; y < logits.height(); ++y)
            for (int x = 0; x < logits.width(); ++x) {
                double mx = logits.at(n, 0, y, x);
                for (int c = 1; c < N; ++c) mx = std::max(mx, static_cast<double>(logits.at(n, c, y, x)));
                double z = 0.0;
                for (int c = 0; c < N; ++c) z += std::exp(logits.at(n, c, y, x) - mx);
                for (int c = 0; c < N; ++c)
                    out.at(n, c, y, x) = static_cast<float>(std::exp(logits.at(n, c, y, x) - mx) / z);
            }
    return out;
}

}  // namespace

Evaluation evaluate(const TrainingRun& run, std::span<const Scene> test, EmptyTransparentPolicy policy) {
    const TrainOptions opts = run.options();
    Evaluation ev;
    ev.edge_mode = opts.schedule.terminal_mode(run.state.epochs_done, uses_edges(run.model.config().variant));
    const int last = std::max(run.state.epochs_done - 1, 0);
    std::vector<Tensor4> depth(test.size()), probs(test.size());
    parallel_for(test.size(), opts.threads, [&](std::size_t i) {
        const auto edges =
            edges_for_sample(run.model, test[i].rgb, ev.edge_mode, opts.canny, opts.schedule.blend_weight(last));
        const ModelOutput out = run.model.predict(test[i].rgb, &edges);
        depth[i] = out.final().depth.value();
        probs[i] = softmax_channels(out.final().logits.value());
    });
    std::vector<EvalSample> samples;
    for (std::size_t i = 0; i < test.size(); ++i) {
        samples.push_back({&depth[i], &test[i].depth_gt, &probs[i], test[i].seg_gt, test[i].transparency_mask});
    }
    ev.report = evaluate_report(samples, run.model.config().num_classes, policy);
    return ev;
}

const std::string& epoch_log_header() {
    static const std::string h = "epoch,edge_source,train_loss,delta_105,delta_110,delta_125,rmse,mae,rel,map_50,miou";
    return h;
}

std::string epoch_log_row(const EpochLog& log) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d,%s,%.6f", log.epoch, to_string(log.edge_mode).c_str(), log.train_loss);
    std::string row = buf;
    if (!log.test) return row + ",NA,NA,NA,NA,NA,NA,NA,NA";
    const MetricReport& r = *log.test;
    for (double v : {r.delta_105, r.delta_110, r.delta_125, r.rmse, r.mae, r.rel, r.map_50, r.miou}) {
        std::snprintf(buf, sizeof buf, ",%.6f", v);
        row += buf;
    }
    return row;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_block(std::vector<std::uint8_t>& out, const std::string& name, const Tensor4& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const Shape& s = t.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainingRun& run) {
    std::vector<std::uint8_t> out{'E', 'G', 'S', 'A'};
    put_u32(out, kCheckpointVersion);
    put_u64(out, run.config.hash());
    const std::string text = run.config.resolved_text();
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    const TrainOptions opts = run.options();
    put_u32(out, static_cast<std::uint32_t>(run.state.epochs_done));
    put_u32(out, static_cast<std::uint32_t>(opts.schedule.warmup_T));
    put_u32(out, static_cast<std::uint32_t>(
                     opts.schedule.terminal_mode(run.state.epochs_done, uses_edges(run.model.config().variant))));
    put_u64(out, run.state.adam.step);
    put_u64(out, run.state.rng_state);
    const auto& params = run.model.parameters();
    put_u32(out, static_cast<std::uint32_t>(3 * params.size()));
    for (const auto& p : params) put_block(out, "param/" + p.name, p.value);
    for (std::size_t i = 0; i < params.size(); ++i) put_block(out, "adam.m/" + params[i].name, run.state.adam.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) put_block(out, "adam.v/" + params[i].name, run.state.adam.v[i]);
    put_u32(out, crc32(out));
    return out;
}

TrainingRun decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || !std::equal(bytes.begin(), bytes.begin() + 4, "EGSA")) {
        throw CheckpointError("not an EGSA checkpoint (bad magic)");
    }
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.last(4), "checkpoint");
    if (tail.u32() != crc32(body)) throw CheckpointError("checkpoint CRC mismatch: file is corrupted");

    ByteReader r(body, "checkpoint");
    r.take(4);
    if (const auto version = r.u32(); version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t stored_hash = r.u64();
    const auto text_bytes = r.take(r.u32());
    const std::string text(text_bytes.begin(), text_bytes.end());
    RunConfig config = RunConfig::parse(text);
    if (config.hash() != stored_hash) throw CheckpointError("checkpoint config hash does not match its config text");

    TrainingRun run = TrainingRun::create(config);
    run.state.epochs_done = static_cast<int>(r.u32());
    if (static_cast<int>(r.u32()) != run.options().schedule.warmup_T) {
        throw CheckpointError("checkpoint schedule T disagrees with its config");
    }
    r.u32();  // terminal edge mode, informational
    run.state.adam.step = r.u64();
    run.state.rng_state = r.u64();

    auto& params = run.model.parameters();
    const std::uint32_t blocks = r.u32();
    if (blocks != 3 * params.size()) {
        throw CheckpointError("checkpoint has " + std::to_string(blocks) + " blocks, model expects " +
                              std::to_string(3 * params.size()));
    }
    std::vector<bool> seen(blocks, false);
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const auto name_bytes = r.take(r.u32());
        const std::string name(name_bytes.begin(), name_bytes.end());
        Shape shape;
        shape.n = static_cast<int>(r.u32());
        shape.c = static_cast<int>(r.u32());
        shape.h = static_cast<int>(r.u32());
        shape.w = static_cast<int>(r.u32());
        const auto slash = name.find('/');
        if (slash == std::string::npos) throw CheckpointError("malformed block name '" + name + "'");
        const std::string kind = name.substr(0, slash);
        std::size_t idx = 0;
        try {
            idx = run.model.index_of(name.substr(slash + 1));
        } catch (const ContractError&) {
            throw CheckpointError("checkpoint block '" + name + "' does not match the model");
        }
        Tensor4* target = nullptr;
        std::size_t slot = idx;
        if (kind == "param") {
            target = &params[idx].value;
        } else if (kind == "adam.m") {
            target = &run.state.adam.m[idx];
            slot += params.size();
        } else if (kind == "adam.v") {
            target = &run.state.adam.v[idx];
            slot += 2 * params.size();
        } else {
            throw CheckpointError("unknown checkpoint block kind '" + kind + "'");
        }
        if (shape != target->shape()) {
            throw CheckpointError("checkpoint block '" + name + "' has shape " + shape.str() + ", expected " +
                                  target->shape().str());
        }
        if (seen[slot]) throw CheckpointError("duplicate checkpoint block '" + name + "'");
        seen[slot] = true;
        for (std::size_t i = 0; i < target->size(); ++i) (*target)[i] = r.f32();
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
    return run;
}

void save_checkpoint(const TrainingRun& run, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(run));
}

TrainingRun load_checkpoint(const std::filesystem::path& path, const RunConfig* expected) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file(path);
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
    TrainingRun run = decode_checkpoint(bytes);
    if (expected != nullptr && expected->hash() != run.config.hash()) {
        throw CheckpointError("config does not match the checkpoint (hash " + std::to_string(expected->hash()) +
                              " vs " + std::to_string(run.config.hash()) + ")");
    }
    return run;
}

}  // namespace egsa
