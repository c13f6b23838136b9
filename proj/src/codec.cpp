#include "dconn/codec.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "dconn/ops.hpp"

namespace dconn {

std::uint8_t SegMask::max_label() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end());
}

std::size_t SegMask::count(std::uint8_t cls) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls));
}

bool ConnectivityMask::is_binary() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0 || v == 1.0; });
}

Tensor ConnectivityMask::to_tensor() const {
    return Tensor({1, classes * kDirections, height, width}, values);
}

ConnectivityMask ConnectivityMask::from_tensor(const Tensor& t) {
    const Shape& s = t.shape();
    const bool batched = s.size() == 4;
    if (!(batched || s.size() == 3) || (batched && s[0] != 1)) {
        throw ShapeError("connectivity tensor must be [1,8K,H,W] or [8K,H,W], got " + shape_str(s));
    }
    const std::size_t ch = s[s.size() - 3];
    if (ch % kDirections != 0) throw ShapeError("connectivity channel count must be a multiple of 8");
    ConnectivityMask m(ch / kDirections, s[s.size() - 2], s[s.size() - 1]);
    std::copy(t.data().begin(), t.data().end(), m.values.begin());
    return m;
}

ConnectivityMask encode_connectivity(const SegMask& seg, std::size_t classes) {
    if (classes == 0) throw std::invalid_argument("encode_connectivity: classes must be at least 1");
    if (seg.max_label() > classes) {
        throw std::invalid_argument("encode_connectivity: label " + std::to_string(seg.max_label()) +
                                    " exceeds class count " + std::to_string(classes));
    }
    const long H = static_cast<long>(seg.height), W = static_cast<long>(seg.width);
    ConnectivityMask out(classes, seg.height, seg.width);
    for (long r = 0; r < H; ++r) {
        for (long c = 0; c < W; ++c) {
            const std::uint8_t label = seg.at(r, c);
            if (label == 0) continue;
            for (std::size_t d = 0; d < kDirections; ++d) {
                const long nr = r + kDirectionTable[d].dr, nc = c + kDirectionTable[d].dc;
                if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
                if (seg.at(nr, nc) == label) out.at(label - 1, d, r, c) = 1.0;
            }
        }
    }
    return out;
}

Tensor bilateral_vote(const Tensor& x) {
    if (x.ndim() != 4 || x.dim(1) % kDirections != 0) {
        throw ShapeError("bilateral_vote: expected [N,8K,H,W], got " + shape_str(x.shape()));
    }
    const std::size_t N = x.dim(0), K = x.dim(1) / kDirections;
    const long H = static_cast<long>(x.dim(2)), W = static_cast<long>(x.dim(3));
    const std::size_t plane = static_cast<std::size_t>(H * W);
    auto px = x.impl();
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t g = 0; g < N * K; ++g) {
        const std::size_t base = g * kDirections * plane;
        for (std::size_t d = 0; d < kDirections; ++d) {
            const auto [dr, dc] = kDirectionTable[d];
            const double* self = px->data.data() + base + d * plane;
            const double* mate = px->data.data() + base + opposite(d) * plane;
            double* o = out.data() + base + d * plane;
            for (long r = std::max(0L, -static_cast<long>(dr)); r < std::min(H, H - dr); ++r)
                for (long c = std::max(0L, -static_cast<long>(dc)); c < std::min(W, W - dc); ++c)
                    o[r * W + c] = self[r * W + c] * mate[(r + dr) * W + (c + dc)];
        }
    }
    return make_result("bilateral_vote", x.shape(), std::move(out), {x}, [=](const TensorImpl& o) {
        auto& gx = px->grad_buffer();
        for (std::size_t g = 0; g < N * K; ++g) {
            const std::size_t base = g * kDirections * plane;
            for (std::size_t d = 0; d < kDirections; ++d) {
                const auto [dr, dc] = kDirectionTable[d];
                const std::size_t so = base + d * plane, mo = base + opposite(d) * plane;
                for (long r = std::max(0L, -static_cast<long>(dr)); r < std::min(H, H - dr); ++r)
                    for (long c = std::max(0L, -static_cast<long>(dc)); c < std::min(W, W - dc); ++c) {
                        const std::size_t si = so + static_cast<std::size_t>(r * W + c);
                        const std::size_t mi = mo + static_cast<std::size_t>((r + dr) * W + (c + dc));
                        const double go = o.grad[si];
                        gx[si] += go * px->data[mi];
                        gx[mi] += go * px->data[si];
                    }
            }
        }
    });
}

ConnectivityMask bilateral_vote(const ConnectivityMask& x) {
    return ConnectivityMask::from_tensor(bilateral_vote(x.to_tensor()));
}

Tensor rca(const Tensor& bicon) {
    if (bicon.ndim() != 4 || bicon.dim(1) % kDirections != 0) {
        throw ShapeError("rca: expected [N,8K,H,W], got " + shape_str(bicon.shape()));
    }
    const std::size_t N = bicon.dim(0), K = bicon.dim(1) / kDirections, H = bicon.dim(2), W = bicon.dim(3);
    return max_axis(reshape(bicon, {N, K, kDirections, H, W}), 2);
}

SegProbMap rca(const ConnectivityMask& bicon) {
    Tensor s = rca(bicon.to_tensor());
    SegProbMap out{bicon.classes, bicon.height, bicon.width, {}};
    out.values.assign(s.data().begin(), s.data().end());
    return out;
}

SegMask labels_from_probabilities(const SegProbMap& probs, double threshold) {
    SegMask seg(probs.height, probs.width);
    for (std::size_t r = 0; r < probs.height; ++r)
        for (std::size_t c = 0; c < probs.width; ++c) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < probs.classes; ++k)
                if (probs.at(k, r, c) > probs.at(best, r, c)) best = k;
            if (probs.classes && probs.at(best, r, c) >= threshold) seg.at(r, c) = static_cast<std::uint8_t>(best + 1);
        }
    return seg;
}

SegMask decode_segmentation(const ConnectivityMask& pred, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("decode_segmentation: threshold must lie in (0,1)");
    return labels_from_probabilities(rca(bilateral_vote(pred)), threshold);
}

Tensor one_hot(const SegMask& seg, std::size_t classes) {
    std::vector<double> v(classes * seg.height * seg.width, 0.0);
    const std::size_t plane = seg.height * seg.width;
    for (std::size_t i = 0; i < plane; ++i) {
        const std::uint8_t l = seg.labels[i];
        if (l > classes) throw std::invalid_argument("one_hot: label exceeds class count");
        if (l) v[(l - 1) * plane + i] = 1.0;
    }
    return Tensor({1, classes, seg.height, seg.width}, std::move(v));
}

namespace {

constexpr char kCmkMagic[4] = {'C', 'M', 'K', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const char* field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(std::string("truncated CMK header field '") + field + "'");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_cmk(std::ostream& out, const ConnectivityMask& mask, CmkDtype dtype) {
    out.write(kCmkMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(mask.classes));
    put_u32(out, static_cast<std::uint32_t>(kDirections));
    put_u32(out, static_cast<std::uint32_t>(mask.height));
    put_u32(out, static_cast<std::uint32_t>(mask.width));
    put_u32(out, static_cast<std::uint32_t>(dtype));
    if (dtype == CmkDtype::U8) {
        if (!mask.is_binary()) throw FormatError("CMK u8 payload requires a binary mask");
        std::vector<char> bytes(mask.values.size());
        for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.values[i] == 1.0 ? 1 : 0;
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    } else {
        for (double v : mask.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) throw FormatError("failed writing CMK payload");
}

ConnectivityMask read_cmk(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCmkMagic, 4) != 0) throw FormatError("bad CMK magic");
    const std::uint32_t classes = get_u32(in, "classes");
    const std::uint32_t channels = get_u32(in, "channels");
    const std::uint32_t height = get_u32(in, "H");
    const std::uint32_t width = get_u32(in, "W");
    const std::uint32_t dtype = get_u32(in, "dtype");
    if (classes == 0 || classes > 255) throw FormatError("bad CMK field 'classes': " + std::to_string(classes));
    if (channels != kDirections) throw FormatError("bad CMK field 'channels': " + std::to_string(channels));
    if (height == 0 || width == 0 || height > 65536 || width > 65536) {
        throw FormatError("bad CMK field 'H'/'W': " + std::to_string(height) + "x" + std::to_string(width));
    }
    if (dtype > 1) throw FormatError("bad CMK field 'dtype': " + std::to_string(dtype));
    ConnectivityMask m(classes, height, width);
    if (dtype == 0) {
        std::vector<char> bytes(m.values.size());
        if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) throw FormatError("truncated CMK payload");
        for (std::size_t i = 0; i < bytes.size(); ++i) {
            if (bytes[i] != 0 && bytes[i] != 1) throw FormatError("bad CMK payload: u8 value is not binary");
            m.values[i] = bytes[i];
        }
    } else {
        for (auto& v : m.values) {
            unsigned char b[4];
            if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated CMK payload");
            const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                       (static_cast<std::uint32_t>(b[2]) << 16) |
                                       (static_cast<std::uint32_t>(b[3]) << 24);
            const float f = std::bit_cast<float>(bits);
            if (!(f >= 0.0f && f <= 1.0f)) throw FormatError("bad CMK payload: f32 value outside [0,1]");
            v = f;
        }
    }
    return m;
}

void write_cmk_file(const std::string& path, const ConnectivityMask& mask, CmkDtype dtype) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_cmk(out, mask, dtype);
}

ConnectivityMask read_cmk_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    return read_cmk(in);
}

}  // namespace dconn
