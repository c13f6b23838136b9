#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "dconn/codec.hpp"

namespace dconn {

struct DiceIou {
    double dice = 0.0;
    double iou = 0.0;
};

// Empty prediction against empty truth scores 1 on both.
DiceIou dice_iou(const SegMask& pred, const SegMask& truth, std::uint8_t cls);

struct Betti {
    std::size_t b0 = 0;  // 8-connected foreground components
    std::size_t b1 = 0;  // 4-connected background components not touching the border
    bool operator==(const Betti&) const = default;
};

// Pixels equal to `cls` are foreground.
Betti betti_numbers(const SegMask& mask, std::uint8_t cls = 1);

struct ImageMetrics {
    std::string name;
    std::uint8_t cls = 1;
    DiceIou scores;
    Betti pred;
    Betti truth;
};

struct MetricsReport {
    std::vector<double> dice;  // per class, mean over images
    std::vector<double> iou;
    double mean_dice = 0.0;
    double mean_iou = 0.0;
    double betti0_error = 0.0;  // mean |b0(pred) - b0(truth)| over images and classes
    double betti1_error = 0.0;
    std::vector<ImageMetrics> rows;
};

MetricsReport evaluate(const std::vector<SegMask>& preds, const std::vector<SegMask>& truths, std::size_t classes,
                       const std::vector<std::string>& names = {});

// Tab-separated rows, one per (image, class), then a summary block.
void write_report(std::ostream& out, const MetricsReport& report);

}  // namespace dconn
