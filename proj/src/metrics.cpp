#include "egsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace egsa {

namespace {

void require_aligned(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> mask,
                     const char* what) {
    if (pred.size() != gt.size() || (!mask.empty() && mask.size() != pred.size())) {
        throw DimensionError(std::string(what) + ": prediction, ground truth and mask sizes differ");
    }
}

bool selected(std::span<const std::uint8_t> mask, std::size_t i) { return mask.empty() || mask[i] != 0; }

// Running counts shared by the single-map and pooled paths.
struct DepthAccumulator {
    std::size_t count = 0;
    std::size_t within[3] = {0, 0, 0};
    double sq = 0.0;
    double abs = 0.0;
    double rel = 0.0;

    static constexpr double kTaus[3] = {1.05, 1.10, 1.25};

    void add(double p, double g) {
        if (!(p > 0.0) || !(g > 0.0)) {
            throw DataError("depth metrics require positive depth, got prediction " + std::to_string(p) +
                            " and ground truth " + std::to_string(g));
        }
        const double ratio = std::max(p / g, g / p);
        for (int k = 0; k < 3; ++k)
            if (ratio < kTaus[k]) ++within[k];
        const double d = p - g;
        sq += d * d;
        abs += std::abs(d);
        rel += std::abs(d) / g;
        ++count;
    }
    double delta(int k) const { return 100.0 * static_cast<double>(within[k]) / static_cast<double>(count); }
};

}  // namespace

double delta_accuracy(std::span<const float> pred, std::span<const float> gt, double tau,
                      std::span<const std::uint8_t> mask) {
    require_aligned(pred, gt, mask, "delta_accuracy");
    if (!(tau > 1.0)) throw ParameterError("delta_accuracy: threshold must exceed 1");
    std::size_t count = 0, hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!selected(mask, i)) continue;
        const double p = pred[i], g = gt[i];
        if (!(p > 0.0) || !(g > 0.0)) {
            throw DataError("delta_accuracy: non-positive depth at pixel " + std::to_string(i));
        }
        ++count;
        if (std::max(p / g, g / p) < tau) ++hits;
    }
    if (count == 0) throw UndefinedMetricError("delta_accuracy: empty pixel mask");
    return 100.0 * static_cast<double>(hits) / static_cast<double>(count);
}

DepthErrors depth_errors(std::span<const float> pred, std::span<const float> gt, std::span<const std::uint8_t> mask) {
    require_aligned(pred, gt, mask, "depth_errors");
    std::size_t count = 0;
    double sq = 0.0, ab = 0.0, rel = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!selected(mask, i)) continue;
        const double d = static_cast<double>(pred[i]) - gt[i];
        if (!(gt[i] > 0.0f)) throw DataError("depth_errors: non-positive ground truth at pixel " + std::to_string(i));
        sq += d * d;
        ab += std::abs(d);
        rel += std::abs(d) / gt[i];
        ++count;
    }
    if (count == 0) throw UndefinedMetricError("depth_errors: empty pixel mask");
    const double n = static_cast<double>(count);
    return {std::sqrt(sq / n), ab / n, rel / n};
}

namespace {

double miou_from_counts(const std::vector<std::size_t>& inter, const std::vector<std::size_t>& uni) {
    double total = 0.0;
    int present = 0;
    for (std::size_t c = 0; c < inter.size(); ++c) {
        if (uni[c] == 0) continue;
        total += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++present;
    }
    if (present == 0) throw UndefinedMetricError("miou: no classes present");
    return 100.0 * total / present;
}

void count_iou(std::span<const int> pred, std::span<const int> gt, int num_classes, std::vector<std::size_t>& inter,
               std::vector<std::size_t>& uni) {
    if (pred.size() != gt.size()) throw DimensionError("miou: prediction and ground truth sizes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i], g = gt[i];
        if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) {
            throw DataError("miou: class index outside [0, " + std::to_string(num_classes) + ")");
        }
        if (p == g) {
            ++inter[p];
            ++uni[p];
        } else {
            ++uni[p];
            ++uni[g];
        }
    }
}

}  // namespace

double miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
    std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
    count_iou(pred, gt, num_classes, inter, uni);
    return miou_from_counts(inter, uni);
}

double average_precision_11pt(std::vector<Detection> detections, std::size_t num_ground_truth) {
    if (num_ground_truth == 0) throw UndefinedMetricError("average_precision: no ground-truth instances");
    std::stable_sort(detections.begin(), detections.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (detections[i].true_positive) ++tp;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(num_ground_truth));
    }
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double r = k / 10.0;
        double best = 0.0;
        for (std::size_t i = 0; i < precision.size(); ++i)
            if (recall[i] >= r) best = std::max(best, precision[i]);
        ap += best;
    }
    return ap / 11.0;
}

std::vector<int> argmax_classes(const Tensor4& scores) {
    const Shape s = scores.shape();
    const std::size_t plane = s.plane();
    std::vector<int> out(static_cast<std::size_t>(s.n) * plane);
    for (int n = 0; n < s.n; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            int best = 0;
            float bv = scores.plane(n, 0)[p];
            for (int c = 1; c < s.c; ++c) {
                const float v = scores.plane(n, c)[p];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out[n * plane + p] = best;
        }
    return out;
}

double map_at_iou(std::span<const SegmentationSample> samples, int num_classes, double iou_threshold) {
    std::vector<std::vector<Detection>> detections(num_classes);
    std::vector<std::size_t> gt_count(num_classes, 0);
    for (const auto& sample : samples) {
        const Tensor4& probs = *sample.probabilities;
        if (probs.channels() != num_classes || probs.batch() != 1 || sample.labels.size() != probs.shape().plane()) {
            throw DimensionError("map_at_iou: probabilities " + probs.shape().str() + " do not match labels");
        }
        const auto pred = argmax_classes(probs);
        for (int c = 0; c < num_classes; ++c) {
            std::size_t inter = 0, pred_n = 0, gt_n = 0;
            double conf = 0.0;
            auto pc = probs.plane(0, c);
            for (std::size_t i = 0; i < pred.size(); ++i) {
                const bool p = pred[i] == c;
                const bool g = sample.labels[i] == c;
                if (p) {
                    ++pred_n;
                    conf += pc[i];
                }
                gt_n += g ? 1 : 0;
                inter += (p && g) ? 1 : 0;
            }
            if (gt_n > 0) ++gt_count[c];
            if (pred_n == 0) continue;
            const double iou = static_cast<double>(inter) / static_cast<double>(pred_n + gt_n - inter);
            detections[c].push_back({conf / static_cast<double>(pred_n), iou > iou_threshold});
        }
    }
    double total = 0.0;
    int counted = 0;
    for (int c = 0; c < num_classes; ++c) {
        if (gt_count[c] == 0) continue;
        total += average_precision_11pt(detections[c], gt_count[c]);
        ++counted;
    }
    if (counted == 0) throw UndefinedMetricError("map_at_iou: no class has ground truth");
    return 100.0 * total / counted;
}

MetricReport evaluate_report(std::span<const EvalSample> samples, int num_classes, EmptyTransparentPolicy policy) {
    if (samples.empty()) throw UndefinedMetricError("evaluate_report: no samples");
    DepthAccumulator all, transparent;
    std::vector<std::size_t> inter(num_classes, 0), uni(num_classes, 0);
    std::vector<SegmentationSample> seg;
    seg.reserve(samples.size());
    for (const auto& s : samples) {
        auto pred = s.depth_pred->data();
        auto gt = s.depth_gt->data();
        if (pred.size() != gt.size() || s.seg_gt.size() != pred.size() ||
            (!s.transparent_mask.empty() && s.transparent_mask.size() != pred.size())) {
            throw DimensionError("evaluate_report: sample maps are not aligned");
        }
        for (std::size_t i = 0; i < pred.size(); ++i) {
            all.add(pred[i], gt[i]);
            if (!s.transparent_mask.empty() && s.transparent_mask[i] != 0) transparent.add(pred[i], gt[i]);
        }
        const auto classes = argmax_classes(*s.seg_probabilities);
        count_iou(classes, s.seg_gt, num_classes, inter, uni);
        seg.push_back({s.seg_probabilities, s.seg_gt});
    }

    MetricReport r;
    r.pixel_count = all.count;
    r.transparent_pixel_count = transparent.count;
    r.delta_105 = all.delta(0);
    r.delta_110 = all.delta(1);
    r.delta_125 = all.delta(2);
    const double n = static_cast<double>(all.count);
    r.rmse = std::sqrt(all.sq / n);
    r.mae = all.abs / n;
    r.rel = all.rel / n;
    r.miou = miou_from_counts(inter, uni);
    r.map_50 = map_at_iou(seg, num_classes, 0.5);
    if (transparent.count > 0) {
        r.delta_105_T = transparent.delta(0);
        r.delta_110_T = transparent.delta(1);
        r.delta_125_T = transparent.delta(2);
    } else if (policy == EmptyTransparentPolicy::Throw) {
        throw UndefinedMetricError("evaluate_report: no transparent pixels in the dataset");
    }
    return r;
}

const std::string& metric_csv_header() {
    static const std::string header =
        "delta_105,delta_110,delta_125,rmse,mae,rel,map_50,miou,delta_105_T,delta_110_T,delta_125_T";
    return header;
}

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string("NA"); }

}  // namespace

std::string metric_csv_row(const MetricReport& r) {
    std::string out;
    for (double v : {r.delta_105, r.delta_110, r.delta_125, r.rmse, r.mae, r.rel, r.map_50, r.miou}) {
        out += fixed6(v);
        out += ',';
    }
    out += fixed6(r.delta_105_T) + ',' + fixed6(r.delta_110_T) + ',' + fixed6(r.delta_125_T);
    return out;
}

std::string metric_pretty_table(const std::vector<std::pair<std::string, MetricReport>>& rows,
                                const std::vector<std::string>& notes) {
    std::string out;
    for (const auto& n : notes) out += "# " + n + "\n";
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-28s | %8s %8s %8s | %7s %7s %7s | %7s %7s | %8s %8s %8s\n", "Method",
                  "d<1.05", "d<1.10", "d<1.25", "RMSE", "MAE", "REL", "mAP", "mIoU", "d<1.05T", "d<1.10T",
                  "d<1.25T");
    out += buf;
    out += std::string(std::char_traits<char>::length(buf) - 1, '-') + "\n";
    auto pct = [](const std::optional<double>& v) {
        char b[16];
        if (v) std::snprintf(b, sizeof b, "%8.2f", *v);
        else std::snprintf(b, sizeof b, "%8s", "NA");
        return std::string(b);
    };
    for (const auto& [label, r] : rows) {
        std::snprintf(buf, sizeof buf, "%-28s | %8.2f %8.2f %8.2f | %7.3f %7.3f %7.3f | %7.2f %7.2f | %s %s %s\n",
                      label.c_str(), r.delta_105, r.delta_110, r.delta_125, r.rmse, r.mae, r.rel, r.map_50, r.miou,
                      pct(r.delta_105_T).c_str(), pct(r.delta_110_T).c_str(), pct(r.delta_125_T).c_str());
        out += buf;
    }
    return out;
}

}  // namespace egsa
