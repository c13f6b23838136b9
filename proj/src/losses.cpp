#include "dconn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "dconn/ops.hpp"

namespace dconn {

std::size_t SizeHistogram::bin_of(double size) const {
    if (mass.empty()) return 0;
    if (max_size <= min_size || size <= min_size) return 0;
    const double pos = (size - min_size) / (max_size - min_size) * static_cast<double>(mass.size());
    return std::min(static_cast<std::size_t>(pos), mass.size() - 1);
}

double SizeHistogram::mass_of(double size) const { return mass.empty() ? 0.0 : mass[bin_of(size)]; }

SizePdf estimate_size_pdf(const std::vector<SegMask>& labels, std::size_t classes, std::size_t bins) {
    if (labels.empty()) throw std::invalid_argument("estimate_size_pdf: no labels");
    if (bins == 0) throw std::invalid_argument("estimate_size_pdf: bins must be at least 1");
    SizePdf pdf;
    for (std::size_t cls = 1; cls <= classes; ++cls) {
        std::vector<double> sizes;
        for (const auto& seg : labels) {
            const std::size_t k = seg.count(static_cast<std::uint8_t>(cls));
            if (k > 0) sizes.push_back(static_cast<double>(k));
        }
        SizeHistogram h;
        h.mass.assign(bins, 0.0);
        h.samples = sizes.size();
        if (!sizes.empty()) {
            auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
            h.min_size = *lo;
            h.max_size = *hi;
            std::vector<std::size_t> counts(bins, 0);
            for (double s : sizes) ++counts[h.bin_of(s)];
            for (std::size_t b = 0; b < bins; ++b) {
                h.mass[b] = static_cast<double>(counts[b]) / static_cast<double>(sizes.size());
            }
        }
        pdf.classes.push_back(std::move(h));
    }
    return pdf;
}

double weight_from_mass(double mass) {
    if (!(mass > 0.0)) return kMaxSizeWeight;
    return std::clamp(-std::log(mass), kMinSizeWeight, kMaxSizeWeight);
}

double size_density_weight(const SizePdf& pdf, std::size_t cls, std::size_t k) {
    if (k == 0) return 1.0;
    if (cls == 0 || cls > pdf.classes.size()) throw std::out_of_range("size_density_weight: unknown class");
    return weight_from_mass(pdf.classes[cls - 1].mass_of(static_cast<double>(k)));
}

void write_size_pdf(std::ostream& out, const SizePdf& pdf) {
    out << std::setprecision(17);
    out << "classes " << pdf.classes.size() << '\n';
    for (std::size_t c = 0; c < pdf.classes.size(); ++c) {
        const auto& h = pdf.classes[c];
        out << "class " << c + 1 << '\n';
        out << "samples " << h.samples << '\n';
        out << "min " << h.min_size << '\n';
        out << "max " << h.max_size << '\n';
        out << "masses";
        for (double m : h.mass) out << ' ' << m;
        out << '\n';
    }
}

SizePdf read_size_pdf(std::istream& in) {
    auto expect = [&in](const std::string& key) {
        std::string k;
        if (!(in >> k) || k != key) throw FormatError("size pdf: expected key '" + key + "'");
    };
    SizePdf pdf;
    std::size_t classes = 0;
    expect("classes");
    if (!(in >> classes)) throw FormatError("size pdf: bad 'classes'");
    for (std::size_t c = 0; c < classes; ++c) {
        SizeHistogram h;
        std::size_t id = 0;
        expect("class");
        if (!(in >> id) || id != c + 1) throw FormatError("size pdf: bad 'class'");
        expect("samples");
        if (!(in >> h.samples)) throw FormatError("size pdf: bad 'samples'");
        expect("min");
        if (!(in >> h.min_size)) throw FormatError("size pdf: bad 'min'");
        expect("max");
        if (!(in >> h.max_size)) throw FormatError("size pdf: bad 'max'");
        expect("masses");
        std::string line;
        std::getline(in, line);
        std::istringstream ls(line);
        double m;
        while (ls >> m) h.mass.push_back(m);
        if (h.mass.empty()) throw FormatError("size pdf: bad 'masses'");
        pdf.classes.push_back(std::move(h));
    }
    return pdf;
}

Tensor sdl_loss(const Tensor& probs, const std::vector<SegMask>& truth, const SizePdf& pdf) {
    if (probs.ndim() != 4 || probs.dim(0) != truth.size()) {
        throw ShapeError("sdl_loss: probabilities " + shape_str(probs.shape()) + " do not match " +
                         std::to_string(truth.size()) + " truth masks");
    }
    const std::size_t N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    std::vector<double> onehot(N * K * H * W, 0.0), truth_sum(N * K, 0.0), weights(N * K, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        const SegMask& g = truth[n];
        if (g.height != H || g.width != W) throw ShapeError("sdl_loss: truth mask size mismatch");
        for (std::size_t i = 0; i < H * W; ++i) {
            const std::uint8_t l = g.labels[i];
            if (l > K) throw std::invalid_argument("sdl_loss: label exceeds class count");
            if (l) {
                onehot[(n * K + l - 1) * H * W + i] = 1.0;
                truth_sum[n * K + l - 1] += 1.0;
            }
        }
        for (std::size_t k = 0; k < K; ++k) {
            weights[n * K + k] = size_density_weight(pdf, k + 1, static_cast<std::size_t>(truth_sum[n * K + k]));
        }
    }
    Tensor g({N, K, H, W}, std::move(onehot));
    Tensor overlap = sum_axis(sum_axis(mul(probs, g), 3), 2);   // [N, K]
    Tensor predicted = sum_axis(sum_axis(probs, 3), 2);         // [N, K]
    Tensor numer = add_scalar(scale(overlap, 2.0), kSdlEpsilon);
    Tensor denom = add(add_scalar(predicted, kSdlEpsilon), Tensor({N, K}, truth_sum));
    Tensor dice_loss = add_scalar(scale(div(numer, denom), -1.0), 1.0);
    return scale(sum(mul(dice_loss, Tensor({N, K}, std::move(weights)))), 1.0 / static_cast<double>(N));
}

BiconTerms bicon_loss(const Tensor& logits, const Tensor& conn_truth) {
    if (logits.shape() != conn_truth.shape() || logits.ndim() != 4 || logits.dim(1) % kDirections != 0) {
        throw ShapeError("bicon_loss: logits " + shape_str(logits.shape()) + " vs label " +
                         shape_str(conn_truth.shape()));
    }
    for (double v : conn_truth.data()) {
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("bicon_loss: connectivity label is not binary");
    }
    const std::size_t N = logits.dim(0), K = logits.dim(1) / kDirections, H = logits.dim(2), W = logits.dim(3);
    const std::size_t plane = H * W;
    Tensor truth = conn_truth.detach();

    Tensor p = sigmoid(logits);
    Tensor pc = clamp(p, kBceClamp, 1.0 - kBceClamp);
    Tensor inverse_truth = add_scalar(scale(truth, -1.0), 1.0);
    Tensor bce = scale(add(mul(truth, log(pc)), mul(inverse_truth, log(add_scalar(scale(pc, -1.0), 1.0)))), -1.0);

    // Edge pixels: the 8 label channels of a class disagree.
    std::vector<double> edge(truth.size(), 0.0);
    std::size_t edge_entries = 0;
    const auto t = truth.data();
    for (std::size_t g = 0; g < N * K; ++g) {
        const std::size_t base = g * kDirections * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            bool uniform = true;
            for (std::size_t d = 1; d < kDirections && uniform; ++d) uniform = t[base + d * plane + i] == t[base + i];
            if (uniform) continue;
            for (std::size_t d = 0; d < kDirections; ++d) edge[base + d * plane + i] = 1.0;
            edge_entries += kDirections;
        }
    }
    Tensor decouple = mean(bce);
    if (edge_entries) {
        decouple = add(decouple, scale(sum(mul(bce, Tensor(truth.shape(), std::move(edge)))),
                                       1.0 / static_cast<double>(edge_entries)));
    }

    // Each unordered direction pair is counted once, at the pixel owning direction d < 4.
    std::vector<Tensor> diffs;
    double pairs = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t d = 0; d < kDirections / 2; ++d) {
            const auto [dr, dc] = kDirectionTable[d];
            const std::size_t self = k * kDirections + d, mate = k * kDirections + opposite(d);
            Tensor diff = sub(slice(p, 1, self, self + 1), shift2d(slice(p, 1, mate, mate + 1), dr, dc));
            std::vector<double> valid(N * plane, 0.0);
            std::size_t count = 0;
            for (std::size_t n = 0; n < N; ++n)
                for (long r = 0; r < static_cast<long>(H); ++r)
                    for (long c = 0; c < static_cast<long>(W); ++c) {
                        const long nr = r + dr, nc = c + dc;
                        if (nr < 0 || nc < 0 || nr >= static_cast<long>(H) || nc >= static_cast<long>(W)) continue;
                        valid[n * plane + static_cast<std::size_t>(r) * W + static_cast<std::size_t>(c)] = 1.0;
                        ++count;
                    }
            diffs.push_back(sum(mul(abs(diff), Tensor({N, 1, H, W}, std::move(valid)))));
            pairs += static_cast<double>(count);
        }
    }
    Tensor con_const = scale(sum(concat(diffs, 0)), 1.0 / pairs);
    return {decouple, con_const};
}

HeadLoss head_loss(const Tensor& logits, const std::vector<SegMask>& seg_truth, const Tensor& conn_truth,
                   const SizePdf* pdf, bool use_sdl) {
    BiconTerms bicon = bicon_loss(logits, conn_truth);
    HeadLoss out;
    out.decouple = bicon.decouple.item();
    out.con_const = bicon.con_const.item();
    out.value = add(bicon.decouple, bicon.con_const);
    if (use_sdl) {
        if (!pdf) throw std::invalid_argument("head_loss: size density loss requested without a size pdf");
        Tensor sd = sdl_loss(rca(bilateral_vote(sigmoid(logits))), seg_truth, *pdf);
        out.sd = sd.item();
        out.value = add(sd, out.value);
    }
    return out;
}

LossReport total_loss(const ForwardOutput& out, const std::vector<SegMask>& seg_truth, const Tensor& conn_truth,
                      const SizePdf* pdf, bool use_sdl) {
    HeadLoss main = head_loss(out.x_main, seg_truth, conn_truth, pdf, use_sdl);
    HeadLoss prior = head_loss(out.x_prior, seg_truth, conn_truth, pdf, use_sdl);
    LossReport r;
    r.objective = add(main.value, scale(prior.value, kPriorWeight));
    r.main = main.value.item();
    r.prior = prior.value.item();
    r.total = r.objective.item();
    r.sd = main.sd + kPriorWeight * prior.sd;
    r.decouple = main.decouple + kPriorWeight * prior.decouple;
    r.con_const = main.con_const + kPriorWeight * prior.con_const;
    return r;
}

}  // namespace dconn
