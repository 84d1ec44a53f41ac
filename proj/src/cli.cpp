#include "egsa/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "egsa/errors.hpp"
#include "egsa/image_io.hpp"
#include "egsa/trainer.hpp"

namespace fs = std::filesystem;

namespace egsa {

namespace {

void write_text(const fs::path& path, const std::string& text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::pair<int, int> parse_size(const std::string& s) {
    int h = 0, w = 0;
    char x = 0;
    std::istringstream in(s);
    if (!(in >> h >> x >> w) || (x != 'x' && x != 'X') || !in.eof() || h < 1 || w < 1) {
        throw ConfigError("--size expects HxW, got '" + s + "'");
    }
    return {h, w};
}

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = path.empty() ? RunConfig() : RunConfig::load(path);
    for (const auto& o : overrides) cfg.apply_override(o);
    TrainOptions::from(cfg);
    ModelConfig::from(cfg);
    return cfg;
}

void check_dataset_fits(const Dataset& data, const RunConfig& cfg) {
    const auto& sc = data.manifest.config;
    if (sc.height != cfg.get_int("model.height") || sc.width != cfg.get_int("model.width")) {
        throw ConfigError("dataset images are " + std::to_string(sc.height) + "x" + std::to_string(sc.width) +
                          " but the model expects " + cfg.get("model.height") + "x" + cfg.get("model.width"));
    }
    if (data.manifest.num_classes != cfg.get_int("model.classes")) {
        throw ConfigError("dataset has " + std::to_string(data.manifest.num_classes) + " classes, model.classes is " +
                          cfg.get("model.classes"));
    }
}

// Trains one configuration into `dir` (config.txt, train_log.csv, checkpoint.egsa).
TrainingRun train_into(const RunConfig& cfg, const Dataset& data, const fs::path& dir, std::ostream* progress) {
    fs::create_directories(dir);
    write_text(dir / "config.txt", cfg.resolved_text());
    TrainingRun run = TrainingRun::create(cfg);
    std::string log = epoch_log_header() + "\n";
    write_text(dir / "train_log.csv", log);
    train(run, data.train, data.test, [&](const EpochLog& e) {
        log += epoch_log_row(e) + "\n";
        write_text(dir / "train_log.csv", log);
        if (progress) *progress << epoch_log_row(e) << "\n" << std::flush;
    });
    save_checkpoint(run, dir / "checkpoint.egsa");
    return run;
}

std::string report_csv(const Evaluation& ev) {
    return "edge_source," + metric_csv_header() + "\n" + to_string(ev.edge_mode) + "," + metric_csv_row(ev.report) +
           "\n";
}

int cmd_generate(std::uint64_t seed, const std::string& out_dir, std::size_t n_train, std::size_t n_test,
                 const std::string& size, int objects, double fraction, double depth_max, std::ostream& out) {
    SceneConfig sc;
    std::tie(sc.height, sc.width) = parse_size(size);
    sc.num_objects = objects;
    sc.transparent_fraction = fraction;
    sc.depth_max = depth_max;
    fs::create_directories(out_dir);
    const auto m = generate_dataset(seed, sc, n_train, n_test, out_dir);
    out << "wrote " << m.train_count << " train and " << m.test_count << " test scenes to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              std::optional<std::uint64_t> seed, std::vector<std::string> overrides, std::ostream& out) {
    if (seed) overrides.push_back("train.seed=" + std::to_string(*seed));
    const RunConfig cfg = build_config(config_path, overrides);
    const Dataset data = load_dataset(data_dir);
    check_dataset_fits(data, cfg);
    out << epoch_log_header() << "\n";
    train_into(cfg, data, out_dir, &out);
    out << "checkpoint: " << (fs::path(out_dir) / "checkpoint.egsa").string() << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& report,
             const std::string& config_path, const std::vector<std::string>& overrides, std::ostream& out) {
    std::optional<RunConfig> expected;
    if (!config_path.empty() || !overrides.empty()) expected = build_config(config_path, overrides);
    const TrainingRun run = load_checkpoint(checkpoint, expected ? &*expected : nullptr);
    const Dataset data = load_dataset(data_dir);
    check_dataset_fits(data, run.config);
    const Evaluation ev = evaluate(run, data.test, EmptyTransparentPolicy::ReportMissing);
    const fs::path report_path(report);
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    write_text(report_path, report_csv(ev));
    std::vector<std::string> notes{"checkpoint " + checkpoint, "edge source " + to_string(ev.edge_mode),
                                   "test scenes " + std::to_string(data.test.size())};
    if (!ev.report.delta_105_T) notes.push_back("no transparent pixels in the test set: transparent metrics NA");
    const std::string table = metric_pretty_table({{run.config.get("fusion.variant"), ev.report}}, notes);
    write_text(fs::path(report).replace_extension(".txt"), table);
    out << table;
    return 0;
}

struct AblationEntry {
    std::string variant;
    std::string edges;  // none, RGB, Depth, Progressive
};

std::vector<AblationEntry> ablation_plan() {
    return {{"MODEST_CA_SA", "none"}, {"MODEST_CA", "none"}, {"MODEST_SA", "none"},   {"EGSA_CA_SA", "RGB"},
            {"EGSA_SA", "RGB"},       {"EGSA_SA", "Depth"},  {"EGSA_SA", "Progressive"}};
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::istringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        std::size_t used = 0;
        try {
            seeds.push_back(std::stoull(item, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (item.empty() || used != item.size()) throw ConfigError("--seeds expects comma-separated integers, got '" + text + "'");
    }
    if (seeds.empty()) throw ConfigError("--seeds needs at least one seed");
    return seeds;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& overrides, std::ostream& out,
               std::ostream& err) {
    const RunConfig base = build_config(config_path, overrides);
    const Dataset data = load_dataset(data_dir);
    check_dataset_fits(data, base);
    fs::create_directories(out_dir);
    const long long epochs = base.get_int("train.epochs");

    std::string csv = "variant,edge_source,seed,status," + metric_csv_header() + "\n";
    std::map<std::pair<std::string, std::string>, std::vector<MetricReport>> by_config;
    int failures = 0;
    for (const auto& entry : ablation_plan()) {
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.set("fusion.variant", entry.variant);
            cfg.set("train.seed", std::to_string(seed));
            if (entry.edges == "RGB") cfg.set("schedule.T", std::to_string(std::max<long long>(epochs, 1)));
            if (entry.edges == "Depth") cfg.set("schedule.T", "0");
            const std::string name = entry.variant + "_" + entry.edges + "_seed" + std::to_string(seed);
            const std::string prefix = entry.variant + "," + entry.edges + "," + std::to_string(seed) + ",";
            try {
                const TrainingRun run = train_into(cfg, data, fs::path(out_dir) / name, nullptr);
                const Evaluation ev = evaluate(run, data.test, EmptyTransparentPolicy::ReportMissing);
                write_text(fs::path(out_dir) / name / "report.csv", report_csv(ev));
                csv += prefix + "ok," + metric_csv_row(ev.report) + "\n";
                by_config[{entry.variant, entry.edges}].push_back(ev.report);
                out << name << ": rmse " << ev.report.rmse << "\n" << std::flush;
            } catch (const std::exception& e) {
                ++failures;
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                csv += prefix + "failed: " + msg + ",NA,NA,NA,NA,NA,NA,NA,NA,NA,NA,NA\n";
                err << name << " failed: " << e.what() << "\n";
            }
            write_text(fs::path(out_dir) / "ablation.csv", csv);
        }
    }

    std::vector<std::pair<std::string, MetricReport>> rows;
    for (const auto& entry : ablation_plan()) {
        auto it = by_config.find({entry.variant, entry.edges});
        if (it == by_config.end()) continue;
        const auto& reports = it->second;
        auto med = [&](auto field) {
            std::vector<double> v;
            for (const auto& r : reports) v.push_back(field(r));
            return median(v);
        };
        auto med_opt = [&](auto field) -> std::optional<double> {
            std::vector<double> v;
            for (const auto& r : reports)
                if (field(r)) v.push_back(*field(r));
            if (v.empty()) return std::nullopt;
            return median(v);
        };
        MetricReport m;
        m.delta_105 = med([](const MetricReport& r) { return r.delta_105; });
        m.delta_110 = med([](const MetricReport& r) { return r.delta_110; });
        m.delta_125 = med([](const MetricReport& r) { return r.delta_125; });
        m.rmse = med([](const MetricReport& r) { return r.rmse; });
        m.mae = med([](const MetricReport& r) { return r.mae; });
        m.rel = med([](const MetricReport& r) { return r.rel; });
        m.map_50 = med([](const MetricReport& r) { return r.map_50; });
        m.miou = med([](const MetricReport& r) { return r.miou; });
        m.delta_105_T = med_opt([](const MetricReport& r) { return r.delta_105_T; });
        m.delta_110_T = med_opt([](const MetricReport& r) { return r.delta_110_T; });
        m.delta_125_T = med_opt([](const MetricReport& r) { return r.delta_125_T; });
        rows.emplace_back(entry.variant + " (" + entry.edges + ")", m);
    }
    std::string seeds_note = "medians over seeds";
    for (auto s : seeds) seeds_note += " " + std::to_string(s);
    const std::string table =
        metric_pretty_table(rows, {seeds_note, "failed runs: " + std::to_string(failures)});
    write_text(fs::path(out_dir) / "ablation_summary.txt", table);
    out << table;
    return failures == 0 ? 0 : 1;
}

Tensor4 load_edge_input(const fs::path& path, bool depth_mode) {
    const auto bytes = read_file(path);
    if (path.extension() == ".dmap") {
        if (!depth_mode) throw ConfigError("a .dmap input needs --mode depth");
        return decode_dmap(bytes);
    }
    Tensor4 img = from_image8(decode_pnm(bytes));
    if (img.channels() == 3) {
        if (depth_mode) throw ConfigError("--mode depth needs a .dmap or single-channel .pgm input");
        return rgb_to_gray(img);
    }
    return img;
}

int cmd_edges(const std::string& input, const std::string& mode, const std::string& out_dir, CannyParams params,
              int scales, std::ostream& out) {
    const bool depth_mode = mode == "depth";
    const Tensor4 image = load_edge_input(input, depth_mode);
    const Tensor4 edges = depth_mode ? depth_to_edges(image, params) : canny(image, params);
    std::vector<std::pair<int, int>> dims;
    for (int k = 0; k < scales; ++k) {
        const int f = 1 << (scales - k);
        dims.emplace_back(image.height() / f, image.width() / f);
    }
    const EdgePyramid pyramid = build_pyramid(edges, dims, depth_mode ? EdgeSource::Depth : EdgeSource::RGB);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "edges.pgm", encode_pnm(to_image8(edges)));
    for (std::size_t k = 0; k < pyramid.levels.size(); ++k) {
        const auto& lv = pyramid.levels[k];
        const std::string name =
            "edges_level" + std::to_string(k) + "_" + std::to_string(lv.height()) + "x" + std::to_string(lv.width()) + ".pgm";
        write_file(fs::path(out_dir) / name, encode_pnm(to_image8(lv)));
    }
    std::size_t count = 0;
    for (std::size_t i = 0; i < edges.size(); ++i) count += edges[i] > 0.5f;
    out << count << " edge pixels; wrote " << pyramid.levels.size() + 1 << " maps to " << out_dir << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Edge-guided joint depth and segmentation on synthetic transparent-object scenes"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    std::string out_dir, data_dir, config_path, checkpoint, report, input, mode = "rgb", size = "64x64";
    std::size_t n_train = 200, n_test = 50;
    int objects = 4, scales = 3;
    double fraction = 0.5, depth_max = 3.0;
    std::optional<std::uint64_t> train_seed;
    std::vector<std::string> overrides;
    std::string seeds_text = "0,1,2,3,4";
    CannyParams canny_params;

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    gen->add_option("--seed", seed, "Dataset seed");
    gen->add_option("--out", out_dir, "Output directory")->required();
    gen->add_option("--train", n_train, "Training scenes")->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
    gen->add_option("--test", n_test, "Test scenes")->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
    gen->add_option("--size", size, "Image size HxW");
    gen->add_option("--objects", objects, "Objects per scene")->check(CLI::NonNegativeNumber);
    gen->add_option("--transparent-fraction", fraction, "Probability an object is transparent")
        ->check(CLI::Range(0.0, 1.0));
    gen->add_option("--depth-max", depth_max, "Background depth")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "Train one model");
    tr->add_option("--config", config_path, "Config file (key = value lines)");
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--out", out_dir, "Run directory")->required();
    tr->add_option("--seed", train_seed, "Overrides train.seed");
    tr->add_option("overrides", overrides, "key=value config overrides");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--out", report, "Report CSV path")->required();
    ev->add_option("--config", config_path, "Expected config; must match the checkpoint");
    ev->add_option("overrides", overrides, "key=value overrides applied to --config");

    auto* ab = app.add_subcommand("ablate", "Run the fusion / edge-source ablation matrix");
    ab->add_option("--config", config_path, "Base config file");
    ab->add_option("--data", data_dir, "Dataset directory")->required();
    ab->add_option("--out", out_dir, "Output directory")->required();
    ab->add_option("--seeds", seeds_text, "Comma-separated training seeds");
    ab->add_option("overrides", overrides, "key=value overrides for every run");

    auto* ed = app.add_subcommand("edges", "Canny edges and the decoder-scale pyramid for one image");
    ed->add_option("--input", input, ".ppm / .pgm image or .dmap depth")->required()->check(CLI::ExistingFile);
    ed->add_option("--mode", mode, "rgb or depth")->check(CLI::IsMember({"rgb", "depth"}));
    ed->add_option("--out", out_dir, "Output directory")->required();
    ed->add_option("--sigma", canny_params.sigma, "Gaussian sigma");
    ed->add_option("--low", canny_params.low, "Low hysteresis threshold");
    ed->add_option("--high", canny_params.high, "High hysteresis threshold");
    ed->add_option("--scales", scales, "Pyramid levels")->check(CLI::Range(1, 8));

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*gen) return cmd_generate(seed, out_dir, n_train, n_test, size, objects, fraction, depth_max, out);
        if (*tr) return cmd_train(config_path, data_dir, out_dir, train_seed, overrides, out);
        if (*ev) return cmd_eval(checkpoint, data_dir, report, config_path, overrides, out);
        if (*ab) return cmd_ablate(config_path, data_dir, out_dir, parse_seeds(seeds_text), overrides, out, err);
        if (*ed) return cmd_edges(input, mode, out_dir, canny_params, scales, out);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ParameterError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace egsa
