#include "dconn/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "dconn/ops.hpp"
#include "dconn/rng.hpp"

namespace dconn {

std::size_t NetConfig::reduction() const {
    if (attention_reduction) return attention_reduction;
    return slice_width() >= 4 ? 2 : 1;
}

void NetConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid net config: " + what); };
    if (input_channels == 0) fail("input_channels must be positive");
    if (classes == 0) fail("classes must be positive");
    if (encoder_channels.size() != 5) fail("encoder_channels must list 5 stages");
    if (decoder_channels.size() != 4) fail("decoder_channels must list 4 layers");
    for (auto c : encoder_channels)
        if (c == 0) fail("encoder widths must be positive");
    for (auto c : decoder_channels)
        if (c == 0 || c % 2 != 0) fail("decoder widths must be positive and even");
    if (deep_channels() % kSubPaths != 0) fail("last encoder width must be divisible by 8");
    if (input_size == 0 || input_size % 16 != 0) fail("input_size must be a positive multiple of 16");
    const std::size_t r = reduction();
    if (r == 0 || slice_width() % r != 0) fail("attention_reduction must divide the sub-path width");
}

Tensor& NetParams::add(const std::string& name, Tensor tensor) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(tensor)});
    return entries_.back().tensor;
}

const Tensor& NetParams::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

Tensor& NetParams::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return entries_[it->second].tensor;
}

std::size_t NetParams::scalar_count() const { return scalar_count(""); }

std::size_t NetParams::scalar_count(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.name.rfind(prefix, 0) == 0) n += e.tensor.size();
    return n;
}

void NetParams::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

NetParams NetParams::clone() const {
    NetParams out;
    for (const auto& e : entries_) {
        out.add(e.name, Tensor(e.tensor.shape(), std::vector<double>(e.tensor.data().begin(), e.tensor.data().end()),
                               e.tensor.requires_grad()));
    }
    return out;
}

namespace {

class Initializer {
   public:
    Initializer(NetParams& params, std::uint64_t seed) : params_(params), rng_(seed) {}

    void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
        Rng stream = rng_.split(params_.entries().size());
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
        std::vector<double> w(out * in * k * k);
        for (auto& v : w) v = stream.uniform(-bound, bound);
        params_.add(name + ".w", Tensor({out, in, k, k}, std::move(w), true));
        params_.add(name + ".b", Tensor::zeros({out}, true));
    }

    void scalar(const std::string& name, double value) { params_.add(name, Tensor::scalar(value, true)); }

   private:
    NetParams& params_;
    Rng rng_;
};

void attention_params(Initializer& init, const std::string& prefix, std::size_t width, std::size_t reduction) {
    const std::size_t key = width / reduction;
    init.conv(prefix + ".pam.q", width, key, 1);
    init.conv(prefix + ".pam.k", width, key, 1);
    init.conv(prefix + ".pam.v", width, width, 1);
    init.scalar(prefix + ".pam.gamma", 0.0);
    init.scalar(prefix + ".cam.gamma", 0.0);
}

std::size_t decoder_input_width(const NetConfig& config, std::size_t layer) {
    return layer == 0 ? config.deep_channels() : config.decoder_channels[layer - 1] / 2;
}

std::string layer_prefix(std::size_t layer) { return "ifd.l" + std::to_string(layer); }

Tensor as_map(const Tensor& v) { return reshape(v, {v.dim(0), v.dim(1), 1, 1}); }

}  // namespace

void add_attention_params(NetParams& params, const std::string& prefix, std::size_t width, std::size_t reduction,
                          std::uint64_t seed) {
    Initializer init(params, seed);
    attention_params(init, prefix, width, reduction);
}

NetParams init_params(const NetConfig& config, std::uint64_t seed) {
    config.validate();
    NetParams params;
    Initializer init(params, seed);
    const auto& enc = config.encoder_channels;
    for (std::size_t s = 0; s < enc.size(); ++s) {
        const std::string p = "enc.s" + std::to_string(s + 1);
        init.conv(p + ".c1", s == 0 ? config.input_channels : enc[s - 1], enc[s], 3);
        init.conv(p + ".c2", enc[s], enc[s], 3);
    }
    const std::size_t ce5 = config.deep_channels(), ck = config.conn_channels(), sw = config.slice_width();
    init.conv("prior.head", ce5, ck, 1);
    init.conv("sde.w1", ck, ce5, 1);
    init.conv("sde.w2", ce5, ce5, 1);
    for (std::size_t i = 0; i < kSubPaths; ++i) {
        const std::string p = "sde.p" + std::to_string(i);
        attention_params(init, p, sw, config.reduction());
        init.conv(p + ".w3", sw, sw, 1);
    }
    init.conv("sde.recode", ce5, ce5, 1);
    std::size_t head_in = 0;
    for (std::size_t l = 0; l < config.decoder_channels.size(); ++l) {
        const std::string p = layer_prefix(l);
        const std::size_t rw = decoder_input_width(config, l), dw = config.decoder_channels[l];
        const std::size_t skip = enc[enc.size() - 2 - l];
        init.conv(p + ".fb.c1", rw, rw, 3);
        init.conv(p + ".fb.c2", rw, rw, 3);
        init.conv(p + ".fb.fuse", rw + skip, dw, 1);
        // The last layer's direction-enhanced map has no consumer.
        if (l + 1 < config.decoder_channels.size()) {
            init.conv(p + ".sb.wd", dw, dw, 1);
            init.conv(p + ".sb.wn", rw, dw, 1);
            init.conv(p + ".sb.re", dw, dw / 2, 1);
        }
        head_in += dw;
    }
    init.conv("head", head_in, ck, 1);
    return params;
}

Tensor conv_layer(const Tensor& x, const NetParams& params, const std::string& name, std::size_t stride) {
    return conv2d(x, params.get(name + ".w"), params.get(name + ".b"), stride);
}

std::vector<Tensor> encoder_forward(const Tensor& image, const NetParams& params, const NetConfig& config) {
    if (image.ndim() != 4 || image.dim(1) != config.input_channels) {
        throw ShapeError("encoder: expected [N," + std::to_string(config.input_channels) + ",H,W] image, got " +
                         shape_str(image.shape()));
    }
    if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
        throw ShapeError("encoder: spatial size must be divisible by 16, got " + shape_str(image.shape()));
    }
    std::vector<Tensor> features;
    Tensor x = image;
    for (std::size_t s = 0; s < config.encoder_channels.size(); ++s) {
        const std::string p = "enc.s" + std::to_string(s + 1);
        x = relu(conv_layer(x, params, p + ".c1", s == 0 ? 1 : 2));
        x = relu(conv_layer(x, params, p + ".c2"));
        features.push_back(x);
    }
    return features;
}

PriorOutput directional_prior(const Tensor& e5, const NetParams& params, const NetConfig& config) {
    const std::size_t factor = config.input_size / e5.dim(2);
    Tensor x_prior = upsample_bilinear(conv_layer(e5, params, "prior.head"), factor);
    Tensor v_prior = relu(conv_layer(as_map(gap(sigmoid(x_prior))), params, "sde.w1"));
    Tensor alpha = sigmoid(conv_layer(v_prior, params, "sde.w2"));
    return {x_prior, reshape(alpha, {alpha.dim(0), alpha.dim(1)})};
}

Tensor pam_forward(const Tensor& x, const NetParams& params, const std::string& prefix) {
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor q = conv_layer(x, params, prefix + ".pam.q");
    Tensor k = conv_layer(x, params, prefix + ".pam.k");
    Tensor v = conv_layer(x, params, prefix + ".pam.v");
    const std::size_t ck = q.dim(1);
    Tensor energy = bmm(transpose_last(reshape(q, {N, ck, HW})), reshape(k, {N, ck, HW}));  // [N, HW, HW]
    Tensor attention = softmax(energy, 2);
    Tensor out = bmm(reshape(v, {N, C, HW}), transpose_last(attention));
    Tensor gamma = reshape(params.get(prefix + ".pam.gamma"), {1, 1, 1, 1});
    return add(mul(gamma, reshape(out, x.shape())), x);
}

Tensor cam_forward(const Tensor& x, const NetParams& params, const std::string& prefix) {
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor flat = reshape(x, {N, C, HW});
    Tensor channel_map = softmax(bmm(flat, transpose_last(flat)), 2);  // [N, C, C]
    Tensor out = bmm(channel_map, flat);
    Tensor gamma = reshape(params.get(prefix + ".cam.gamma"), {1, 1, 1, 1});
    return add(mul(gamma, reshape(out, x.shape())), x);
}

Tensor sub_path_excitation(const Tensor& e5, const Tensor& alpha_prior, const NetParams& params) {
    if (e5.dim(1) % kSubPaths != 0 || alpha_prior.dim(1) != e5.dim(1)) {
        throw ShapeError("sub_path_excitation: cannot slice " + shape_str(e5.shape()) + " with prior " +
                         shape_str(alpha_prior.shape()) + " into 8 sub-paths");
    }
    auto feature_slices = channel_slice(e5, kSubPaths);
    auto prior_slices = channel_slice(as_map(alpha_prior), kSubPaths);
    std::vector<Tensor> outputs;
    outputs.reserve(kSubPaths);
    for (std::size_t i = 0; i < kSubPaths; ++i) {
        const std::string p = "sde.p" + std::to_string(i);
        Tensor attended = cam_forward(pam_forward(feature_slices[i], params, p), params, p);
        Tensor excited = conv_layer(mul(prior_slices[i], attended), params, p + ".w3");
        outputs.push_back(add(excited, feature_slices[i]));
    }
    return conv_layer(channel_concat(outputs), params, "sde.recode");
}

SpaceOutput space_block(const Tensor& r, const Tensor& d_next, const NetParams& params, const std::string& prefix) {
    Tensor n = conv_layer(as_map(gap(r)), params, prefix + ".sb.wn");  // [N, C_d, 1, 1]
    Tensor d_proj = conv_layer(d_next, params, prefix + ".sb.wd");
    Tensor alpha = sigmoid(sum_axis(mul(d_proj, n), 1, true));  // [N, 1, h, w]
    Tensor recoded = conv_layer(d_next, params, prefix + ".sb.re");
    return {mul(alpha, recoded), alpha};
}

Tensor feature_block(const Tensor& r, const Tensor& skip, const NetParams& params, const std::string& prefix) {
    if (skip.ndim() != 4 || skip.dim(2) != 2 * r.dim(2) || skip.dim(3) != 2 * r.dim(3)) {
        throw ShapeError("feature_block: skip " + shape_str(skip.shape()) + " must be twice the spatial size of " +
                         shape_str(r.shape()));
    }
    Tensor x = relu(conv_layer(r, params, prefix + ".fb.c1"));
    x = relu(conv_layer(x, params, prefix + ".fb.c2"));
    x = upsample_bilinear(x, 2);
    return conv_layer(concat({x, skip}, 1), params, prefix + ".fb.fuse");
}

ForwardOutput net_forward(const Tensor& image, const NetParams& params, const NetConfig& config) {
    if (image.ndim() != 4 || image.dim(2) != config.input_size || image.dim(3) != config.input_size) {
        throw ShapeError("net_forward: image " + shape_str(image.shape()) + " does not match input_size " +
                         std::to_string(config.input_size));
    }
    ForwardOutput out;
    out.encoder = encoder_forward(image, params, config);
    PriorOutput prior = directional_prior(out.encoder.back(), params, config);
    out.x_prior = prior.x_prior;
    out.alpha_prior = prior.alpha_prior;
    out.e_sde = sub_path_excitation(out.encoder.back(), prior.alpha_prior, params);

    Tensor r = out.e_sde;
    std::vector<Tensor> decoded;
    const std::size_t layers = config.decoder_channels.size();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string p = layer_prefix(l);
        Tensor d = feature_block(r, out.encoder[layers - 1 - l], params, p);
        if (l + 1 < layers) {
            SpaceOutput s = space_block(r, d, params, p);
            out.alpha_nd.push_back(s.alpha_nd);
            r = s.r_next;
        }
        const std::size_t factor = config.input_size / d.dim(2);
        decoded.push_back(factor > 1 ? upsample_bilinear(d, factor) : d);
    }
    out.x_main = conv_layer(concat(decoded, 1), params, "head");
    return out;
}

namespace {

constexpr char kDcwMagic[4] = {'D', 'C', 'W', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated DCW field '" + field + "'");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(std::ostream& out, const NetParams& params) {
    out.write(kDcwMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
        put_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(out, static_cast<std::uint32_t>(e.tensor.ndim()));
        for (auto d : e.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : e.tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) throw FormatError("failed writing DCW checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kDcwMagic, 4) != 0) throw FormatError("bad DCW magic");
    const std::uint32_t count = get_u32(in, "count");
    if (count > 1'000'000) throw FormatError("bad DCW field 'count': " + std::to_string(count));
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t len = get_u32(in, "name length");
        if (len == 0 || len > 4096) throw FormatError("bad DCW field 'name length': " + std::to_string(len));
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw FormatError("truncated DCW name");
        const std::uint32_t ndim = get_u32(in, name + ".ndim");
        if (ndim == 0 || ndim > 8) throw FormatError("bad DCW field '" + name + ".ndim': " + std::to_string(ndim));
        Shape shape(ndim);
        for (auto& d : shape) {
            d = get_u32(in, name + ".dims");
            if (d == 0) throw FormatError("bad DCW field '" + name + ".dims': zero dimension");
        }
        std::vector<double> data(numel(shape));
        for (auto& v : data) {
            const float f = std::bit_cast<float>(get_u32(in, name + ".data"));
            if (!std::isfinite(f)) throw FormatError("bad DCW data in '" + name + "': non-finite value");
            v = f;
        }
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(data), true)});
    }
    return out;
}

void write_checkpoint_file(const std::string& path, const NetParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_checkpoint(out, params);
}

void assign_checkpoint(const std::vector<NamedTensor>& loaded, NetParams& params) {
    if (loaded.size() != params.entries().size()) {
        throw ShapeError("checkpoint holds " + std::to_string(loaded.size()) + " tensors, config expects " +
                         std::to_string(params.entries().size()));
    }
    for (const auto& e : loaded) {
        if (!params.contains(e.name)) throw ShapeError("checkpoint tensor '" + e.name + "' not in config");
        Tensor& dst = params.get(e.name);
        if (dst.shape() != e.tensor.shape()) {
            throw ShapeError("shape mismatch for '" + e.name + "': checkpoint " + shape_str(e.tensor.shape()) +
                             " vs config " + shape_str(dst.shape()));
        }
        auto values = dst.mutable_data();
        std::copy(e.tensor.data().begin(), e.tensor.data().end(), values.begin());
    }
}

void load_checkpoint_file(const std::string& path, NetParams& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    assign_checkpoint(read_checkpoint(in), params);
}

}  // namespace dconn
