#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egsa/tensor.hpp"

namespace egsa {

/// Depth and segmentation metrics. Percentages are in [0, 100]. The *_T fields are
/// restricted to transparent pixels and are empty when the dataset has none.
struct MetricReport {
    double delta_105 = 0.0;
    double delta_110 = 0.0;
    double delta_125 = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    double rel = 0.0;
    double map_50 = 0.0;
    double miou = 0.0;
    std::optional<double> delta_105_T;
    std::optional<double> delta_110_T;
    std::optional<double> delta_125_T;
    std::size_t pixel_count = 0;
    std::size_t transparent_pixel_count = 0;
};

/// 100 * fraction of masked pixels with max(pred/gt, gt/pred) < tau. An empty `mask`
/// selects every pixel; otherwise nonzero entries select.
double delta_accuracy(std::span<const float> pred, std::span<const float> gt, double tau,
                      std::span<const std::uint8_t> mask = {});

struct DepthErrors {
    double rmse = 0.0;
    double mae = 0.0;
    double rel = 0.0;
};

DepthErrors depth_errors(std::span<const float> pred, std::span<const float> gt,
                         std::span<const std::uint8_t> mask = {});

/// Mean IoU (percent) over classes present in either map.
double miou(std::span<const int> pred, std::span<const int> gt, int num_classes);

/// One ranked detection for average precision.
struct Detection {
    double confidence = 0.0;
    bool true_positive = false;
};

/// 11-point interpolated AP in [0, 1]. Detections are ranked by descending
/// confidence; ties keep their input order.
double average_precision_11pt(std::vector<Detection> detections, std::size_t num_ground_truth);

/// Per-image class probabilities (1, N, H, W) and ground-truth labels (H*W).
struct SegmentationSample {
    const Tensor4* probabilities = nullptr;
    std::span<const int> labels;
};

/// mAP (percent). For each class, every image with a non-empty argmax mask for that
/// class contributes one detection with confidence equal to the mean class
/// probability over the mask; it is a true positive iff mask IoU > iou_threshold.
/// Classes without ground truth anywhere are excluded.
double map_at_iou(std::span<const SegmentationSample> samples, int num_classes, double iou_threshold = 0.5);

/// Per-pixel argmax over channels, first maximum wins.
std::vector<int> argmax_classes(const Tensor4& scores);

struct EvalSample {
    const Tensor4* depth_pred = nullptr;     // (1, 1, H, W), positive
    const Tensor4* depth_gt = nullptr;       // (1, 1, H, W), positive
    const Tensor4* seg_probabilities = nullptr;  // (1, N, H, W)
    std::span<const int> seg_gt;
    std::span<const std::uint8_t> transparent_mask;
};

enum class EmptyTransparentPolicy { Throw, ReportMissing };

/// Dataset aggregation. Depth metrics and mIoU pool pixels across all samples.
MetricReport evaluate_report(std::span<const EvalSample> samples, int num_classes,
                             EmptyTransparentPolicy policy = EmptyTransparentPolicy::Throw);

/// "delta_105,delta_110,delta_125,rmse,mae,rel,map_50,miou,delta_105_T,delta_110_T,delta_125_T"
const std::string& metric_csv_header();
/// Fixed 6-decimal formatting; missing transparent values print as NA.
std::string metric_csv_row(const MetricReport& report);
/// Human-readable table in the usual column order, with `notes` as '#' header lines.
std::string metric_pretty_table(const std::vector<std::pair<std::string, MetricReport>>& rows,
                                const std::vector<std::string>& notes);

}  // namespace egsa
