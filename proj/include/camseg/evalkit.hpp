#pragma once

// Quantitative harness: per-class IoU / mIoU against ground truth, confidence
// histograms and the confidence-guided loss transform.

#include <map>

#include "camseg/maskgen.hpp"

namespace camseg {

struct IoUReport {
    std::map<int, double> per_class;   // label value -> IoU, only classes present
    double miou = 0.0;
    std::vector<int64_t> confusion;    // num_classes^2, row = truth, col = prediction
    std::vector<int64_t> pred_ignored; // per truth class: pixels the prediction left at 255
    int num_classes = 0;

    int64_t& confusion_at(int truth, int pred) {
        return confusion[size_t(truth) * num_classes + pred];
    }
    int64_t confusion_at(int truth, int pred) const {
        return confusion[size_t(truth) * num_classes + pred];
    }
};

/// Accumulates one prediction/truth pair into a confusion matrix. Pixels
/// labeled 255 in the ground truth are excluded from all counts; pixels the
/// prediction stamped to 255 count as false negatives of the truth class.
inline void accumulate_confusion(IoUReport& report, const LabelImage& pred,
                                 const LabelImage& gt) {
    if (pred.rows != gt.rows || pred.cols != gt.cols)
        throw std::invalid_argument("miou: prediction and ground truth shapes differ");
    for (size_t i = 0; i < gt.labels.size(); ++i) {
        const int t = gt.labels[i], p = pred.labels[i];
        if (t == kIgnoreLabel) continue;
        if (t >= report.num_classes || (p >= report.num_classes && p != kIgnoreLabel))
            throw std::invalid_argument("miou: label value out of range");
        if (p == kIgnoreLabel)
            ++report.pred_ignored[t];
        else
            ++report.confusion_at(t, p);
    }
}

/// Computes per-class IoU from the accumulated confusion. The mean covers the
/// classes that appear in prediction or truth; entirely absent classes are
/// excluded rather than counted as zero.
inline void finish_iou(IoUReport& report) {
    report.per_class.clear();
    std::vector<int64_t> row_sum(report.num_classes, 0), col_sum(report.num_classes, 0);
    for (int t = 0; t < report.num_classes; ++t)
        for (int p = 0; p < report.num_classes; ++p) {
            row_sum[t] += report.confusion_at(t, p);
            col_sum[p] += report.confusion_at(t, p);
        }
    for (int t = 0; t < report.num_classes; ++t) row_sum[t] += report.pred_ignored[t];
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < report.num_classes; ++c) {
        const int64_t tp = report.confusion_at(c, c);
        const int64_t denom = row_sum[c] + col_sum[c] - tp;  // TP + FP + FN
        if (denom == 0) continue;
        const double iou = double(tp) / double(denom);
        report.per_class[c] = iou;
        sum += iou;
        ++present;
    }
    report.miou = present > 0 ? sum / present : 0.0;
}

/// num_classes counts the label values including background (21 for a
/// 20-class dataset).
inline IoUReport miou(const std::vector<LabelImage>& pred_masks,
                      const std::vector<LabelImage>& gt_masks, int num_classes) {
    if (pred_masks.size() != gt_masks.size())
        throw std::invalid_argument("miou: prediction and ground truth counts differ");
    IoUReport report;
    report.num_classes = num_classes;
    report.confusion.assign(size_t(num_classes) * num_classes, 0);
    report.pred_ignored.assign(num_classes, 0);
    for (size_t i = 0; i < pred_masks.size(); ++i)
        accumulate_confusion(report, pred_masks[i], gt_masks[i]);
    finish_iou(report);
    return report;
}

struct HistogramBin {
    double lo = 0.0, hi = 0.0;
    double frequency = 0.0;
};

/// Bins confidence values into [e_i, e_{i+1}) ranges (last bin closed).
/// Frequencies are normalized to sum 1.
inline std::vector<HistogramBin> confidence_histogram(const std::vector<MapD>& conf_maps,
                                                      const std::vector<double>& bin_edges) {
    if (conf_maps.empty()) throw std::invalid_argument("confidence_histogram: no maps");
    if (bin_edges.size() < 2) throw std::invalid_argument("confidence_histogram: need >= 2 edges");
    for (size_t i = 1; i < bin_edges.size(); ++i)
        if (bin_edges[i] <= bin_edges[i - 1])
            throw std::invalid_argument("confidence_histogram: edges must increase");

    std::vector<HistogramBin> bins(bin_edges.size() - 1);
    for (size_t b = 0; b < bins.size(); ++b) {
        bins[b].lo = bin_edges[b];
        bins[b].hi = bin_edges[b + 1];
    }
    int64_t total = 0;
    std::vector<int64_t> counts(bins.size(), 0);
    for (const auto& m : conf_maps) {
        for (double v : m.data) {
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument("confidence_histogram: value outside [0, 1]");
            ++total;
            if (v < bin_edges.front() || v > bin_edges.back()) continue;
            size_t b = bins.size() - 1;
            for (size_t i = 0; i + 1 < bin_edges.size(); ++i) {
                if (v < bin_edges[i + 1]) {
                    b = i;
                    break;
                }
            }
            ++counts[b];
        }
    }
    if (total == 0) throw std::invalid_argument("confidence_histogram: empty maps");
    for (size_t b = 0; b < bins.size(); ++b) bins[b].frequency = double(counts[b]) / double(total);
    return bins;
}

struct CglResult {
    MapD masked_loss;
    double mean = 0.0;      // over kept pixels
    int64_t kept = 0;
};

/// Confidence-guided loss: zero the per-pixel loss wherever confidence falls
/// below mu, average over the surviving pixels.
inline CglResult cgl(const MapD& loss, const MapD& conf, double mu) {
    if (!loss.same_shape(conf)) throw std::invalid_argument("cgl: shape mismatch");
    if (mu < 0.0 || mu > 1.0) throw std::invalid_argument("cgl: mu must be in [0, 1]");
    CglResult res;
    res.masked_loss = MapD(loss.rows, loss.cols, 0.0);
    double sum = 0.0;
    for (size_t i = 0; i < loss.data.size(); ++i) {
        if (conf.data[i] >= mu) {
            res.masked_loss.data[i] = loss.data[i];
            sum += loss.data[i];
            ++res.kept;
        }
    }
    res.mean = sum / double(std::max<int64_t>(1, res.kept));
    return res;
}

}  // namespace camseg
