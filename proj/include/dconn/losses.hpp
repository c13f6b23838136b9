#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "dconn/codec.hpp"
#include "dconn/net.hpp"
#include "dconn/tensor.hpp"

namespace dconn {

inline constexpr double kSdlEpsilon = 1.0;
inline constexpr double kMinSizeWeight = 0.1;
inline constexpr double kMaxSizeWeight = 20.0;
inline constexpr double kBceClamp = 1e-6;
inline constexpr double kPriorWeight = 0.3;

// Equal-width histogram of one class's nonzero label sizes.
struct SizeHistogram {
    double min_size = 0.0;
    double max_size = 0.0;
    std::size_t samples = 0;
    std::vector<double> mass;  // per bin; empty bins hold 0

    std::size_t bin_of(double size) const;
    double mass_of(double size) const;
};

struct SizePdf {
    std::vector<SizeHistogram> classes;  // index 0 is class 1
};

SizePdf estimate_size_pdf(const std::vector<SegMask>& labels, std::size_t classes, std::size_t bins = 16);

// -ln(mass) clamped to [0.1, 20]; a zero mass maps to the ceiling.
double weight_from_mass(double mass);
// 1 for k == 0, otherwise weight_from_mass of the bin containing k.
// `cls` is the 1-based class id.
double size_density_weight(const SizePdf& pdf, std::size_t cls, std::size_t k);

void write_size_pdf(std::ostream& out, const SizePdf& pdf);
SizePdf read_size_pdf(std::istream& in);

// Size-weighted Dice variant over foreground classes, averaged over the batch.
// `probs` is [N, K, H, W]; `truth` holds N masks.
Tensor sdl_loss(const Tensor& probs, const std::vector<SegMask>& truth, const SizePdf& pdf);

struct BiconTerms {
    Tensor decouple;
    Tensor con_const;
};

// Connectivity supervision on logits [N, 8K, H, W] against a binary label of
// the same shape: BCE over everything plus BCE over edge pixels, and an L1
// agreement term between each direction and its opposite at the neighbour.
BiconTerms bicon_loss(const Tensor& logits, const Tensor& conn_truth);

struct LossReport {
    Tensor objective;  // differentiable total
    double total = 0.0;
    double main = 0.0;
    double prior = 0.0;
    // Components below are weighted like the heads: main + 0.3 * prior.
    double sd = 0.0;
    double decouple = 0.0;
    double con_const = 0.0;
};

struct HeadLoss {
    Tensor value;
    double sd = 0.0;
    double decouple = 0.0;
    double con_const = 0.0;
};

HeadLoss head_loss(const Tensor& logits, const std::vector<SegMask>& seg_truth, const Tensor& conn_truth,
                   const SizePdf* pdf, bool use_sdl);

// L_main + 0.3 L_prior. `pdf` may be null when use_sdl is false.
LossReport total_loss(const ForwardOutput& out, const std::vector<SegMask>& seg_truth, const Tensor& conn_truth,
                      const SizePdf* pdf, bool use_sdl);

}  // namespace dconn
