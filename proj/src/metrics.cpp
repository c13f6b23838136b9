#include "dconn/metrics.hpp"

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace dconn {

DiceIou dice_iou(const SegMask& pred, const SegMask& truth, std::uint8_t cls) {
    if (pred.height != truth.height || pred.width != truth.width) {
        throw std::invalid_argument("dice_iou: mask sizes differ");
    }
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool a = pred.labels[i] == cls, b = truth.labels[i] == cls;
        p += a;
        g += b;
        both += a && b;
    }
    if (p + g == 0) return {1.0, 1.0};
    const double inter = static_cast<double>(both);
    return {2.0 * inter / static_cast<double>(p + g), inter / static_cast<double>(p + g - both)};
}

namespace {

class UnionFind {
   public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

   private:
    std::vector<std::size_t> parent_;
};

// Components of the selected phase via a single raster union-find pass,
// optionally excluding those that touch the border.
std::size_t count_components(const SegMask& mask, std::uint8_t cls, bool foreground, bool eight, bool skip_border) {
    const std::size_t H = mask.height, W = mask.width;
    auto selected = [&](std::size_t r, std::size_t c) { return (mask.at(r, c) == cls) == foreground; };
    UnionFind uf(H * W);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            if (!selected(r, c)) continue;
            const std::size_t i = r * W + c;
            if (c > 0 && selected(r, c - 1)) uf.unite(i, i - 1);
            if (r > 0 && selected(r - 1, c)) uf.unite(i, i - W);
            if (eight && r > 0) {
                if (c > 0 && selected(r - 1, c - 1)) uf.unite(i, i - W - 1);
                if (c + 1 < W && selected(r - 1, c + 1)) uf.unite(i, i - W + 1);
            }
        }
    std::vector<char> is_root(H * W, 0), touches(H * W, 0);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            if (!selected(r, c)) continue;
            const std::size_t root = uf.find(r * W + c);
            is_root[root] = 1;
            if (r == 0 || c == 0 || r + 1 == H || c + 1 == W) touches[root] = 1;
        }
    std::size_t n = 0;
    for (std::size_t i = 0; i < H * W; ++i) n += is_root[i] && !(skip_border && touches[i]);
    return n;
}

}  // namespace

Betti betti_numbers(const SegMask& mask, std::uint8_t cls) {
    return {count_components(mask, cls, true, true, false), count_components(mask, cls, false, false, true)};
}

MetricsReport evaluate(const std::vector<SegMask>& preds, const std::vector<SegMask>& truths, std::size_t classes,
                       const std::vector<std::string>& names) {
    if (preds.size() != truths.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(preds.size()) + " predictions vs " +
                                    std::to_string(truths.size()) + " ground truths");
    }
    if (!names.empty() && names.size() != preds.size()) throw std::invalid_argument("evaluate: name count mismatch");
    MetricsReport report;
    report.dice.assign(classes, 0.0);
    report.iou.assign(classes, 0.0);
    if (preds.empty() || classes == 0) return report;
    double b0 = 0.0, b1 = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t k = 1; k <= classes; ++k) {
            ImageMetrics m;
            m.name = names.empty() ? std::to_string(i) : names[i];
            m.cls = static_cast<std::uint8_t>(k);
            m.scores = dice_iou(preds[i], truths[i], m.cls);
            m.pred = betti_numbers(preds[i], m.cls);
            m.truth = betti_numbers(truths[i], m.cls);
            report.dice[k - 1] += m.scores.dice;
            report.iou[k - 1] += m.scores.iou;
            b0 += std::abs(static_cast<double>(m.pred.b0) - static_cast<double>(m.truth.b0));
            b1 += std::abs(static_cast<double>(m.pred.b1) - static_cast<double>(m.truth.b1));
            report.rows.push_back(std::move(m));
        }
    }
    const double n = static_cast<double>(preds.size());
    for (std::size_t k = 0; k < classes; ++k) {
        report.dice[k] /= n;
        report.iou[k] /= n;
        report.mean_dice += report.dice[k] / static_cast<double>(classes);
        report.mean_iou += report.iou[k] / static_cast<double>(classes);
    }
    report.betti0_error = b0 / static_cast<double>(report.rows.size());
    report.betti1_error = b1 / static_cast<double>(report.rows.size());
    return report;
}

void write_report(std::ostream& out, const MetricsReport& report) {
    out << std::setprecision(10);
    out << "image\tclass\tdice\tiou\tb0_pred\tb0_true\tb1_pred\tb1_true\n";
    for (const auto& m : report.rows) {
        out << m.name << '\t' << static_cast<int>(m.cls) << '\t' << m.scores.dice << '\t' << m.scores.iou << '\t'
            << m.pred.b0 << '\t' << m.truth.b0 << '\t' << m.pred.b1 << '\t' << m.truth.b1 << '\n';
    }
    out << "\n[summary]\n";
    out << "images\t" << (report.dice.empty() ? 0 : report.rows.size() / report.dice.size()) << '\n';
    for (std::size_t k = 0; k < report.dice.size(); ++k) {
        out << "dice_class" << k + 1 << '\t' << report.dice[k] << '\n';
        out << "iou_class" << k + 1 << '\t' << report.iou[k] << '\n';
    }
    out << "mean_dice\t" << report.mean_dice << '\n';
    out << "mean_iou\t" << report.mean_iou << '\n';
    out << "betti0_error\t" << report.betti0_error << '\n';
    out << "betti1_error\t" << report.betti1_error << '\n';
}

}  // namespace dconn
