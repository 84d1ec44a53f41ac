#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "egsa/tensor.hpp"

namespace egsa {

inline constexpr int kNumClasses = 3;
enum SceneClass : int { kBackground = 0, kOpaque = 1, kTransparent = 2 };
inline constexpr float kDepthFloor = 0.1f;

struct SceneConfig {
    int height = 64;
    int width = 64;
    int num_objects = 4;
    double transparent_fraction = 0.5;
    double depth_max = 3.0;

    bool operator==(const SceneConfig&) const = default;
};

/// One sample: RGB in [0,1] on the 8-bit grid, depth >= 0.1, class indices in {0,1,2}.
struct Scene {
    Tensor4 rgb;        // (1, 3, H, W)
    Tensor4 depth_gt;   // (1, 1, H, W)
    std::vector<int> seg_gt;                  // H*W
    std::vector<std::uint8_t> transparency_mask;  // 1 where seg_gt == kTransparent
    std::uint64_t seed = 0;

    int height() const { return rgb.height(); }
    int width() const { return rgb.width(); }
    bool operator==(const Scene&) const = default;
};

enum class PrimitiveKind { Rectangle, Circle };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Rectangle;
    double center_y = 0.0;
    double center_x = 0.0;
    double half_h = 0.0;  // radius for circles
    double half_w = 0.0;
    double depth = 1.0;
    bool transparent = false;
    std::array<double, 3> color{};
    double alpha = 1.0;

    bool covers(int y, int x) const;
};

/// A scene together with the primitives and the object-free background render.
struct SceneLayout {
    Scene scene;
    std::vector<Primitive> objects;
    Tensor4 background_rgb;
    Tensor4 background_depth;
};

SceneLayout generate_scene_layout(std::uint64_t seed, const SceneConfig& config);
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Directory layout: rgb.ppm (P6), depth.dmap, seg.pgm (P5, raw class index), meta.txt.
void write_scene(const Scene& scene, const std::filesystem::path& directory);
Scene read_scene(const std::filesystem::path& directory);

enum class Split { Train, Test };
std::string to_string(Split split);

/// seed xor splitmix64(2 * index + split bit). Distinct (index, split) pairs never collide.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index, Split split);

struct DatasetManifest {
    std::uint64_t seed = 0;
    SceneConfig config;
    int num_classes = kNumClasses;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
    std::vector<std::string> entries;  // "train/000000", ..., "test/000000", ...

    std::vector<std::string> split(Split which) const;
};

DatasetManifest generate_dataset(std::uint64_t seed, const SceneConfig& config, std::size_t n_train,
                                 std::size_t n_test, const std::filesystem::path& out_dir);
std::string encode_manifest(const DatasetManifest& manifest);
/// Parses <dir>/manifest.txt and checks every listed sample directory exists.
DatasetManifest read_manifest(const std::filesystem::path& dataset_dir);

struct Dataset {
    DatasetManifest manifest;
    std::vector<Scene> train;
    std::vector<Scene> test;
};

/// Reads the manifest and every listed sample. Failures name the offending sample path.
Dataset load_dataset(const std::filesystem::path& dataset_dir);

}  // namespace egsa
