#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "dconn/tensor.hpp"

namespace dconn {

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct Offset {
    int dr;
    int dc;
};

inline constexpr std::size_t kDirections = 8;

// Row-major neighbour scan. Index d (0-based) is channel d+1; its opposite
// direction is 7-d, so channel j pairs with channel 9-j.
inline constexpr std::array<Offset, kDirections> kDirectionTable{{
    {-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1},
}};

constexpr std::size_t opposite(std::size_t d) { return kDirections - 1 - d; }

// Integer class raster, 0 = background.
struct SegMask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> labels;

    SegMask() = default;
    SegMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

    std::uint8_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
    std::uint8_t max_label() const;
    std::size_t count(std::uint8_t cls) const;
    bool operator==(const SegMask&) const = default;
};

// Per-class probability raster, [classes, H, W].
struct SegProbMap {
    std::size_t classes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    double at(std::size_t cls, std::size_t r, std::size_t c) const {
        return values[(cls * height + r) * width + c];
    }
};

// [classes, 8, H, W] connectivity values: binary for labels, probabilities
// for predictions.
struct ConnectivityMask {
    std::size_t classes = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    ConnectivityMask() = default;
    ConnectivityMask(std::size_t k, std::size_t h, std::size_t w)
        : classes(k), height(h), width(w), values(k * kDirections * h * w, 0.0) {}

    std::size_t index(std::size_t cls, std::size_t d, std::size_t r, std::size_t c) const {
        return ((cls * kDirections + d) * height + r) * width + c;
    }
    double at(std::size_t cls, std::size_t d, std::size_t r, std::size_t c) const {
        return values[index(cls, d, r, c)];
    }
    double& at(std::size_t cls, std::size_t d, std::size_t r, std::size_t c) { return values[index(cls, d, r, c)]; }
    bool is_binary() const;
    bool operator==(const ConnectivityMask&) const = default;

    // [1, 8*classes, H, W] tensor without gradient.
    Tensor to_tensor() const;
    // Accepts [1, 8*classes, H, W] or [8*classes, H, W].
    static ConnectivityMask from_tensor(const Tensor& t);
};

ConnectivityMask encode_connectivity(const SegMask& seg, std::size_t classes);

// Bilateral voting on [N, 8*classes, H, W]: out_j(x,y) = x_j(x,y) * x_{9-j}(x+a_j, y+b_j),
// out-of-bounds partners count as 0. Differentiable.
Tensor bilateral_vote(const Tensor& x);
ConnectivityMask bilateral_vote(const ConnectivityMask& x);

// Region-guided channel aggregation: per class, max over its 8 channels.
// [N, 8*classes, H, W] -> [N, classes, H, W]. Differentiable through the argmax.
Tensor rca(const Tensor& bicon);
SegProbMap rca(const ConnectivityMask& bicon);

// Argmax over classes of the per-class probabilities; background when the
// best probability is below `threshold`. Ties go to the lowest class index.
SegMask labels_from_probabilities(const SegProbMap& probs, double threshold = 0.5);

// BV -> RCA -> thresholded argmax.
SegMask decode_segmentation(const ConnectivityMask& pred, double threshold = 0.5);

// [1, classes, H, W] one-hot over foreground classes 1..classes.
Tensor one_hot(const SegMask& seg, std::size_t classes);

// CMK1: "CMK1", u32 classes, u32 channels(=8), u32 H, u32 W, u32 dtype
// (0 = u8 binary, 1 = f32), then class-major, channel-major, row-major payload.
enum class CmkDtype : std::uint32_t { U8 = 0, F32 = 1 };
void write_cmk(std::ostream& out, const ConnectivityMask& mask, CmkDtype dtype);
ConnectivityMask read_cmk(std::istream& in);
void write_cmk_file(const std::string& path, const ConnectivityMask& mask, CmkDtype dtype);
ConnectivityMask read_cmk_file(const std::string& path);

}  // namespace dconn
