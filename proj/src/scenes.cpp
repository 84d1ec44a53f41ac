#include "egsa/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "egsa/image_io.hpp"
#include "egsa/rng.hpp"

namespace egsa {

namespace fs = std::filesystem;

bool Primitive::covers(int y, int x) const {
    const double dy = y - center_y;
    const double dx = x - center_x;
    if (kind == PrimitiveKind::Circle) return dy * dy + dx * dx <= half_h * half_h;
    return std::abs(dy) <= half_h && std::abs(dx) <= half_w;
}

namespace {

constexpr int kMaxPlacementRetries = 8;

float quantize8(double v) {
    const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    return static_cast<float>(q) / 255.0f;
}

Primitive sample_primitive(Rng& rng, const SceneConfig& cfg) {
    Primitive p;
    p.kind = rng.uniform() < 0.5 ? PrimitiveKind::Rectangle : PrimitiveKind::Circle;
    const double lo = std::min(cfg.height, cfg.width) / 10.0;
    const double hi = std::min(cfg.height, cfg.width) / 4.0;
    p.half_h = rng.uniform(lo, hi);
    p.half_w = p.kind == PrimitiveKind::Circle ? p.half_h : rng.uniform(lo, hi);
    // Shrink until the primitive fits with a one-pixel margin; bounded.
    for (int attempt = 0; attempt < kMaxPlacementRetries; ++attempt) {
        if (2.0 * p.half_h + 2.0 < cfg.height && 2.0 * p.half_w + 2.0 < cfg.width) break;
        p.half_h *= 0.5;
        p.half_w *= 0.5;
    }
    p.center_y = rng.uniform(p.half_h + 1.0, std::max(p.half_h + 1.0, cfg.height - 2.0 - p.half_h));
    p.center_x = rng.uniform(p.half_w + 1.0, std::max(p.half_w + 1.0, cfg.width - 2.0 - p.half_w));
    p.depth = rng.uniform(0.5, cfg.depth_max);
    p.transparent = rng.uniform() < cfg.transparent_fraction;
    for (double& c : p.color) c = p.transparent ? rng.uniform() : rng.uniform(0.1, 0.9);
    p.alpha = p.transparent ? rng.uniform(0.1, 0.3) : 1.0;
    return p;
}

bool on_rim(const Primitive& p, int y, int x) {
    return !p.covers(y - 1, x) || !p.covers(y + 1, x) || !p.covers(y, x - 1) || !p.covers(y, x + 1);
}

}  // namespace

SceneLayout generate_scene_layout(std::uint64_t seed, const SceneConfig& cfg) {
    if (cfg.height < 32 || cfg.width < 32) throw ParameterError("generate_scene: height and width must be >= 32");
    if (cfg.num_objects < 0) throw ParameterError("generate_scene: num_objects must be >= 0");
    if (!(cfg.depth_max > 0.5)) throw ParameterError("generate_scene: depth_max must exceed 0.5");
    if (cfg.transparent_fraction < 0.0 || cfg.transparent_fraction > 1.0) {
        throw ParameterError("generate_scene: transparent_fraction must be in [0, 1]");
    }
    Rng rng(seed);
    const int h = cfg.height, w = cfg.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    // Background: tilted color gradient, sinusoidal stripes and pixel noise.
    std::array<double, 3> base{}, grad_y{}, grad_x{};
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.25, 0.75);
        grad_y[c] = rng.uniform(-0.15, 0.15);
        grad_x[c] = rng.uniform(-0.15, 0.15);
    }
    const double stripe_freq = rng.uniform(0.15, 0.6);
    const double stripe_angle = rng.uniform(0.0, std::numbers::pi);
    const double stripe_amp = rng.uniform(0.02, 0.06);
    const double tilt_y = rng.uniform(), tilt_x = rng.uniform();

    std::vector<double> color(3 * plane);
    std::vector<double> depth(plane);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double u = static_cast<double>(y) / (h - 1) - 0.5;
            const double v = static_cast<double>(x) / (w - 1) - 0.5;
            const double stripe =
                stripe_amp * std::sin(stripe_freq * (x * std::cos(stripe_angle) + y * std::sin(stripe_angle)));
            for (int c = 0; c < 3; ++c)
                color[c * plane + i] = base[c] + grad_y[c] * u + grad_x[c] * v + stripe + rng.uniform(-0.02, 0.02);
            depth[i] = cfg.depth_max * (1.0 - 0.1 * (tilt_y * (u + 0.5) + tilt_x * (v + 0.5)));
        }

    SceneLayout layout;
    layout.background_rgb = Tensor4(Shape{1, 3, h, w});
    layout.background_depth = Tensor4(Shape{1, 1, h, w});
    for (std::size_t i = 0; i < 3 * plane; ++i) layout.background_rgb[i] = quantize8(color[i]);
    for (std::size_t i = 0; i < plane; ++i) layout.background_depth[i] = static_cast<float>(depth[i]);

    for (int k = 0; k < cfg.num_objects; ++k) layout.objects.push_back(sample_primitive(rng, cfg));
    // Painter's order, far to near; the per-pixel depth test also hides objects behind the background.
    std::vector<std::size_t> order(layout.objects.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return layout.objects[a].depth > layout.objects[b].depth; });

    std::vector<int> seg(plane, kBackground);
    for (std::size_t k : order) {
        const Primitive& p = layout.objects[k];
        const int y0 = std::max(0, static_cast<int>(std::floor(p.center_y - p.half_h)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(p.center_y + p.half_h)));
        const int x0 = std::max(0, static_cast<int>(std::floor(p.center_x - p.half_w)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(p.center_x + p.half_w)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (!p.covers(y, x)) continue;
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (!(p.depth < depth[i])) continue;
                depth[i] = p.depth;
                if (p.transparent) {
                    const double rim = on_rim(p, y, x) ? 0.1 : 0.0;
                    for (int c = 0; c < 3; ++c) {
                        double& dst = color[c * plane + i];
                        dst = (1.0 - p.alpha) * dst + p.alpha * p.color[c] + rim;
                    }
                    seg[i] = kTransparent;
                } else {
                    for (int c = 0; c < 3; ++c) color[c * plane + i] = p.color[c] + rng.uniform(-0.04, 0.04);
                    seg[i] = kOpaque;
                }
            }
    }

    Scene& s = layout.scene;
    s.seed = seed;
    s.rgb = Tensor4(Shape{1, 3, h, w});
    s.depth_gt = Tensor4(Shape{1, 1, h, w});
    for (std::size_t i = 0; i < 3 * plane; ++i) s.rgb[i] = quantize8(color[i]);
    for (std::size_t i = 0; i < plane; ++i) s.depth_gt[i] = std::max(kDepthFloor, static_cast<float>(depth[i]));
    s.seg_gt = std::move(seg);
    s.transparency_mask.resize(plane);
    for (std::size_t i = 0; i < plane; ++i) s.transparency_mask[i] = s.seg_gt[i] == kTransparent ? 1 : 0;
    return layout;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
    return std::move(generate_scene_layout(seed, config).scene);
}

// ---------------------------------------------------------------------------

void write_scene(const Scene& scene, const fs::path& directory) {
    fs::create_directories(directory);
    write_file(directory / "rgb.ppm", encode_pnm(to_image8(scene.rgb)));
    write_file(directory / "depth.dmap", encode_dmap(scene.depth_gt));
    Image8 seg{scene.height(), scene.width(), 1, {}};
    seg.pixels.reserve(scene.seg_gt.size());
    for (int c : scene.seg_gt) seg.pixels.push_back(static_cast<std::uint8_t>(c));
    write_file(directory / "seg.pgm", encode_pnm(seg));
    const std::string meta = "seed " + std::to_string(scene.seed) + "\n";
    write_file(directory / "meta.txt", std::span(reinterpret_cast<const std::uint8_t*>(meta.data()), meta.size()));
}

Scene read_scene(const fs::path& directory) {
    Scene s;
    const auto rgb = decode_pnm(read_file(directory / "rgb.ppm"));
    if (rgb.channels != 3) throw FormatError(directory.string() + "/rgb.ppm: expected P6", 0);
    s.rgb = from_image8(rgb);
    s.depth_gt = decode_dmap(read_file(directory / "depth.dmap"));
    const auto seg = decode_pnm(read_file(directory / "seg.pgm"));
    if (seg.channels != 1) throw FormatError(directory.string() + "/seg.pgm: expected P5", 0);
    if (seg.height != rgb.height || seg.width != rgb.width || s.depth_gt.height() != rgb.height ||
        s.depth_gt.width() != rgb.width) {
        throw FormatError(directory.string() + ": rgb, depth and segmentation sizes differ", 0);
    }
    s.seg_gt.reserve(seg.pixels.size());
    s.transparency_mask.reserve(seg.pixels.size());
    for (std::size_t i = 0; i < seg.pixels.size(); ++i) {
        const int c = seg.pixels[i];
        if (c >= kNumClasses) {
            throw FormatError(directory.string() + "/seg.pgm: class index " + std::to_string(c) + " out of range", i);
        }
        s.seg_gt.push_back(c);
        s.transparency_mask.push_back(c == kTransparent ? 1 : 0);
    }
    const auto meta_bytes = read_file(directory / "meta.txt");
    std::istringstream meta(std::string(meta_bytes.begin(), meta_bytes.end()));
    std::string key;
    if (!(meta >> key >> s.seed) || key != "seed") throw FormatError(directory.string() + "/meta.txt: missing seed", 0);
    return s;
}

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index, Split split) {
    return dataset_seed ^ splitmix64((static_cast<std::uint64_t>(index) << 1) | (split == Split::Test ? 1u : 0u));
}

std::vector<std::string> DatasetManifest::split(Split which) const {
    const std::string prefix = to_string(which) + "/";
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (e.rfind(prefix, 0) == 0) out.push_back(e);
    return out;
}

namespace {

std::string sample_name(Split split, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s/%06zu", to_string(split).c_str(), index);
    return buf;
}

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string encode_manifest(const DatasetManifest& m) {
    std::string out = "# egsa synthetic dataset v1\n";
    out += "# seed " + std::to_string(m.seed) + "\n";
    out += "# size " + std::to_string(m.config.height) + "x" + std::to_string(m.config.width) + "\n";
    out += "# classes " + std::to_string(m.num_classes) + "\n";
    out += "# objects " + std::to_string(m.config.num_objects) + "\n";
    out += "# transparent_fraction " + g17(m.config.transparent_fraction) + "\n";
    out += "# depth_max " + g17(m.config.depth_max) + "\n";
    out += "# train " + std::to_string(m.train_count) + "\n";
    out += "# test " + std::to_string(m.test_count) + "\n";
    for (const auto& e : m.entries) out += e + "\n";
    return out;
}

DatasetManifest generate_dataset(std::uint64_t seed, const SceneConfig& config, std::size_t n_train,
                                 std::size_t n_test, const fs::path& out_dir) {
    if (n_train < 1 || n_test < 1) throw ParameterError("generate_dataset: need at least one train and one test sample");
    DatasetManifest m;
    m.seed = seed;
    m.config = config;
    m.train_count = n_train;
    m.test_count = n_test;
    for (Split split : {Split::Train, Split::Test}) {
        const std::size_t n = split == Split::Train ? n_train : n_test;
        for (std::size_t i = 0; i < n; ++i) {
            const std::string name = sample_name(split, i);
            const fs::path dir = out_dir / name;
            try {
                write_scene(generate_scene(sample_seed(seed, i, split), config), dir);
            } catch (const std::exception& e) {
                throw std::runtime_error("generate_dataset: failed writing " + dir.string() + ": " + e.what());
            }
            m.entries.push_back(name);
        }
    }
    const std::string text = encode_manifest(m);
    try {
        write_file(out_dir / "manifest.txt", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    } catch (const std::exception& e) {
        throw std::runtime_error("generate_dataset: failed writing " + (out_dir / "manifest.txt").string() + ": " +
                                 e.what());
    }
    return m;
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
    const fs::path path = dataset_dir / "manifest.txt";
    const auto bytes = read_file(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    DatasetManifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream hdr(line.substr(1));
            std::string key;
            hdr >> key;
            if (key == "seed") hdr >> m.seed;
            else if (key == "size") {
                char x = 0;
                hdr >> m.config.height >> x >> m.config.width;
            } else if (key == "classes") hdr >> m.num_classes;
            else if (key == "objects") hdr >> m.config.num_objects;
            else if (key == "transparent_fraction") hdr >> m.config.transparent_fraction;
            else if (key == "depth_max") hdr >> m.config.depth_max;
            else if (key == "train") hdr >> m.train_count;
            else if (key == "test") hdr >> m.test_count;
            continue;
        }
        if (!fs::is_directory(dataset_dir / line)) {
            throw DataError(path.string() + ": listed sample " + (dataset_dir / line).string() + " does not exist");
        }
        m.entries.push_back(line);
    }
    if (m.entries.size() != m.train_count + m.test_count) {
        throw DataError(path.string() + ": header counts do not match the listed samples");
    }
    return m;
}

Dataset load_dataset(const fs::path& dataset_dir) {
    Dataset d;
    d.manifest = read_manifest(dataset_dir);
    for (const auto& entry : d.manifest.entries) {
        const fs::path dir = dataset_dir / entry;
        Scene scene;
        try {
            scene = read_scene(dir);
        } catch (const std::exception& e) {
            throw DataError("failed to load sample " + dir.string() + ": " + e.what());
        }
        if (scene.height() != d.manifest.config.height || scene.width() != d.manifest.config.width) {
            throw DataError("sample " + dir.string() + " does not match the manifest image size");
        }
        (entry.rfind("train/", 0) == 0 ? d.train : d.test).push_back(std::move(scene));
    }
    return d;
}

}  // namespace egsa
