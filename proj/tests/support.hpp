#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "dconn/codec.hpp"
#include "dconn/rng.hpp"
#include "dconn/synth.hpp"
#include "dconn/tensor.hpp"

namespace dconn::testing {

inline Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v), requires_grad);
}

// Bernoulli noise mask with labels in 1..classes, isolated pixels removed.
inline SegMask random_mask(Rng& rng, std::size_t h, std::size_t w, std::size_t classes = 1, double density = 0.5) {
    SegMask m(h, w);
    for (auto& l : m.labels) {
        if (rng.uniform() < density) l = static_cast<std::uint8_t>(1 + rng.below(classes));
    }
    remove_isolated_pixels(m);
    return m;
}

// Blocky mask: a few random rectangles, so regions are large and holes occur.
inline SegMask random_rect_mask(Rng& rng, std::size_t h, std::size_t w, std::size_t rects = 4) {
    SegMask m(h, w);
    for (std::size_t k = 0; k < rects; ++k) {
        const std::size_t r0 = rng.below(h), c0 = rng.below(w);
        const std::size_t rh = 2 + rng.below(h / 2), cw = 2 + rng.below(w / 2);
        const bool hollow = rng.uniform() < 0.5;
        for (std::size_t r = r0; r < std::min(h, r0 + rh); ++r)
            for (std::size_t c = c0; c < std::min(w, c0 + cw); ++c) {
                const bool edge = r == r0 || c == c0 || r + 1 == std::min(h, r0 + rh) || c + 1 == std::min(w, c0 + cw);
                m.at(r, c) = (!hollow || edge) ? 1 : 0;
            }
    }
    remove_isolated_pixels(m);
    return m;
}

// Breadth-first flood fill component counts, independent of the library's
// union-find labelling.
inline std::size_t flood_count(const SegMask& m, std::uint8_t cls, bool foreground, bool eight, bool skip_border) {
    const long H = static_cast<long>(m.height), W = static_cast<long>(m.width);
    std::vector<char> seen(m.labels.size(), 0);
    auto sel = [&](long r, long c) { return (m.at(r, c) == cls) == foreground; };
    std::size_t count = 0;
    for (long r0 = 0; r0 < H; ++r0)
        for (long c0 = 0; c0 < W; ++c0) {
            if (!sel(r0, c0) || seen[r0 * W + c0]) continue;
            bool border = false;
            std::deque<std::pair<long, long>> q{{r0, c0}};
            seen[r0 * W + c0] = 1;
            while (!q.empty()) {
                auto [r, c] = q.front();
                q.pop_front();
                if (r == 0 || c == 0 || r == H - 1 || c == W - 1) border = true;
                for (long dr = -1; dr <= 1; ++dr)
                    for (long dc = -1; dc <= 1; ++dc) {
                        if ((dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0)) continue;
                        const long nr = r + dr, nc = c + dc;
                        if (nr < 0 || nc < 0 || nr >= H || nc >= W) continue;
                        if (!sel(nr, nc) || seen[nr * W + nc]) continue;
                        seen[nr * W + nc] = 1;
                        q.emplace_back(nr, nc);
                    }
            }
            if (!(skip_border && border)) ++count;
        }
    return count;
}

inline SegMask mask_from_rows(const std::vector<std::string>& rows) {
    SegMask m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c] == '.' ? 0 : rows[r][c] - '0';
    return m;
}


}  // namespace dconn::testing
