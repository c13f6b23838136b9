#include "dconn/check_suite.hpp"

#include <cmath>

#include "dconn/codec.hpp"
#include "dconn/losses.hpp"
#include "dconn/ops.hpp"
#include "dconn/rng.hpp"

namespace dconn {

namespace {

// Values uniform in +-scale, pushed at least `gap` away from zero so kinked
// ops (relu, abs) are evaluated away from their kink.
Tensor random_leaf(Rng& rng, const Shape& shape, double scale = 1.0, double gap = 0.0) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) {
        x = rng.uniform(-scale, scale);
        if (std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
    }
    return Tensor(shape, std::move(v), true);
}

Tensor random_const(Rng& rng, const Shape& shape) {
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor(shape, std::move(v));
}

// Contracts an op output with fixed random weights so every output entry
// contributes a distinct amount to the scalar.
Tensor contract(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed ^ 0xC0FFEEULL);
    return sum(mul(y, random_const(rng, y.shape())));
}

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

CheckTarget op_target(const std::string& name, std::vector<Shape> shapes, OpFn fn, double scale = 1.0,
                      double gap = 0.0) {
    auto run = [name, shapes, fn, scale, gap](const GradCheckOptions& opt) {
        Rng rng = Rng(opt.seed).split(std::hash<std::string>{}(name) & 0xFFFF);
        std::vector<NamedTensor> params;
        std::vector<Tensor> inputs;
        for (std::size_t i = 0; i < shapes.size(); ++i) {
            inputs.push_back(random_leaf(rng, shapes[i], scale, gap));
            params.push_back({name + ".in" + std::to_string(i), inputs.back()});
        }
        const std::uint64_t wseed = rng.next_u64();
        return grad_check([&] { return contract(fn(inputs), wseed); }, params, opt);
    };
    return {name, 1e-5, 1e-5, run};
}

SegMask random_blob_mask(Rng& rng, std::size_t size, std::uint8_t classes) {
    SegMask m(size, size);
    for (std::uint8_t k = 1; k <= classes; ++k) {
        const long r0 = rng.range(0, static_cast<long>(size) - 3), c0 = rng.range(0, static_cast<long>(size) - 3);
        const long h = rng.range(2, 4), w = rng.range(2, 4);
        for (long r = r0; r < std::min<long>(r0 + h, static_cast<long>(size)); ++r)
            for (long c = c0; c < std::min<long>(c0 + w, static_cast<long>(size)); ++c) m.at(r, c) = k;
    }
    return m;
}

}  // namespace

NetConfig tiny_net_config() {
    NetConfig c;
    c.input_size = 16;
    c.encoder_channels = {4, 4, 8, 8, 8};
    c.decoder_channels = {4, 4, 4, 4};
    return c;
}

GradCheckResult check_full_net(const NetConfig& config, std::uint64_t seed, bool perturb,
                               const GradCheckOptions& options) {
    config.validate();
    Rng rng(seed);
    NetParams params = init_params(config, rng.next_u64());
    if (perturb) {
        for (const auto& e : params.entries()) {
            Tensor t = e.tensor;
            if (e.name.find("gamma") != std::string::npos) {
                t.mutable_data()[0] = rng.uniform(0.2, 0.6);
            } else if (e.name.ends_with(".b")) {
                for (auto& v : t.mutable_data()) v = rng.uniform(-0.1, 0.1);
            }
        }
    }
    const std::size_t S = config.input_size;
    Tensor image = random_const(rng, {1, config.input_channels, S, S});
    std::vector<SegMask> truth{random_blob_mask(rng, S, static_cast<std::uint8_t>(config.classes))};
    Tensor conn = encode_connectivity(truth[0], config.classes).to_tensor();
    SizePdf pdf = estimate_size_pdf(truth, config.classes, 4);
    auto f = [&] {
        ForwardOutput out = net_forward(image, params, config);
        return total_loss(out, truth, conn, &pdf, true).objective;
    };
    return grad_check(f, params.entries(), options);
}

std::vector<CheckTarget> gradcheck_targets() {
    std::vector<CheckTarget> t;
    t.push_back(op_target("conv", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}},
                          [](const auto& in) { return conv2d(in[0], in[1], in[2], 1); }));
    t.push_back(op_target("conv_stride2", {{1, 2, 6, 6}, {3, 2, 3, 3}, {3}},
                          [](const auto& in) { return conv2d(in[0], in[1], in[2], 2); }));
    t.push_back(op_target("conv1x1", {{2, 3, 4, 4}, {2, 3, 1, 1}, {2}},
                          [](const auto& in) { return conv2d(in[0], in[1], in[2], 1); }));
    t.push_back(op_target("relu", {{2, 3, 4}}, [](const auto& in) { return relu(in[0]); }, 1.0, 0.05));
    t.push_back(op_target("sigmoid", {{2, 3, 4}}, [](const auto& in) { return sigmoid(in[0]); }, 3.0));
    t.push_back(op_target("log", {{2, 3, 4}}, [](const auto& in) { return log(add_scalar(abs(in[0]), 0.5)); },
                          1.0, 0.05));
    t.push_back(op_target("abs", {{2, 3, 4}}, [](const auto& in) { return abs(in[0]); }, 1.0, 0.05));
    t.push_back(op_target("clamp", {{2, 3, 4}}, [](const auto& in) { return clamp(in[0], -0.5, 0.5); }));
    t.push_back(op_target("add", {{2, 3, 4}, {1, 3, 1}}, [](const auto& in) { return add(in[0], in[1]); }));
    t.push_back(op_target("sub", {{2, 1, 4}, {2, 3, 4}}, [](const auto& in) { return sub(in[0], in[1]); }));
    t.push_back(op_target("mul", {{2, 3, 4}, {2, 3, 1}}, [](const auto& in) { return mul(in[0], in[1]); }));
    t.push_back(op_target("div", {{2, 3, 4}, {1, 3, 4}},
                          [](const auto& in) { return div(in[0], add_scalar(abs(in[1]), 0.5)); }, 1.0, 0.05));
    t.push_back(op_target("scale", {{3, 4}}, [](const auto& in) { return add_scalar(scale(in[0], -1.7), 0.3); }));
    t.push_back(op_target("sum", {{3, 4}}, [](const auto& in) { return sum(in[0]); }));
    t.push_back(op_target("mean", {{3, 4}}, [](const auto& in) { return mean(in[0]); }));
    t.push_back(op_target("sum_axis", {{2, 3, 4}}, [](const auto& in) { return sum_axis(in[0], 1, true); }));
    t.push_back(op_target("max_axis", {{2, 5, 3}}, [](const auto& in) { return max_axis(in[0], 1); }));
    t.push_back(op_target("gap", {{2, 3, 4, 5}}, [](const auto& in) { return gap(in[0]); }));
    t.push_back(op_target("upsample", {{1, 2, 3, 3}}, [](const auto& in) { return upsample_bilinear(in[0], 2); }));
    t.push_back(op_target("upsample4", {{1, 1, 2, 3}}, [](const auto& in) { return upsample_bilinear(in[0], 4); }));
    t.push_back(op_target("matmul", {{3, 4}, {4, 2}}, [](const auto& in) { return matmul(in[0], in[1]); }));
    t.push_back(op_target("bmm", {{2, 3, 4}, {2, 4, 2}}, [](const auto& in) { return bmm(in[0], in[1]); }));
    t.push_back(op_target("transpose", {{2, 3, 4}}, [](const auto& in) { return transpose_last(in[0]); }));
    t.push_back(op_target("softmax", {{2, 3, 4}}, [](const auto& in) { return softmax(in[0], 2); }, 2.0));
    t.push_back(op_target("softmax_axis1", {{2, 3, 4}}, [](const auto& in) { return softmax(in[0], 1); }, 2.0));
    t.push_back(op_target("reshape", {{2, 3, 4}}, [](const auto& in) { return reshape(in[0], {4, 6}); }));
    t.push_back(op_target("slice", {{2, 5, 4}}, [](const auto& in) { return slice(in[0], 1, 1, 4); }));
    t.push_back(op_target("concat", {{2, 2, 3}, {2, 1, 3}},
                          [](const auto& in) { return concat({in[0], in[1]}, 1); }));
    t.push_back(op_target("channel_slice", {{1, 4, 2, 2}}, [](const auto& in) {
        auto parts = channel_slice(in[0], 2);
        return channel_concat({scale(parts[1], 2.0), parts[0]});
    }));
    t.push_back(op_target("shift2d", {{1, 2, 4, 5}}, [](const auto& in) { return shift2d(in[0], 1, -1); }));
    t.push_back(op_target("bilateral_vote", {{1, 16, 4, 4}},
                          [](const auto& in) { return bilateral_vote(sigmoid(in[0])); }, 2.0));
    t.push_back(op_target("rca", {{1, 8, 3, 4}}, [](const auto& in) { return rca(in[0]); }));
    t.push_back({"pam", 1e-5, 1e-5, [](const GradCheckOptions& opt) {
                     Rng rng = Rng(opt.seed).split(101);
                     NetParams p;
                     add_attention_params(p, "a", 4, 2, rng.next_u64());
                     p.get("a.pam.gamma").mutable_data()[0] = 0.7;
                     Tensor x = random_leaf(rng, {1, 4, 3, 3});
                     std::vector<NamedTensor> params = p.entries();
                     params.push_back({"x", x});
                     const std::uint64_t w = rng.next_u64();
                     return grad_check([&] { return contract(pam_forward(x, p, "a"), w); }, params, opt);
                 }});
    t.push_back({"cam", 1e-5, 1e-5, [](const GradCheckOptions& opt) {
                     Rng rng = Rng(opt.seed).split(102);
                     NetParams p;
                     add_attention_params(p, "a", 3, 1, rng.next_u64());
                     p.get("a.cam.gamma").mutable_data()[0] = -0.4;
                     Tensor x = random_leaf(rng, {2, 3, 2, 3});
                     std::vector<NamedTensor> params{{"a.cam.gamma", p.get("a.cam.gamma")}, {"x", x}};
                     const std::uint64_t w = rng.next_u64();
                     return grad_check([&] { return contract(cam_forward(x, p, "a"), w); }, params, opt);
                 }});
    t.push_back({"sdl_loss", 1e-5, 1e-5, [](const GradCheckOptions& opt) {
                     Rng rng = Rng(opt.seed).split(103);
                     std::vector<SegMask> truth{random_blob_mask(rng, 6, 2), random_blob_mask(rng, 6, 2)};
                     SizePdf pdf = estimate_size_pdf(truth, 2, 3);
                     Tensor logits = random_leaf(rng, {2, 2, 6, 6}, 2.0);
                     return grad_check([&] { return sdl_loss(sigmoid(logits), truth, pdf); }, {{"logits", logits}},
                                       opt);
                 }});
    t.push_back({"bicon_loss", 1e-5, 1e-5, [](const GradCheckOptions& opt) {
                     Rng rng = Rng(opt.seed).split(104);
                     SegMask m = random_blob_mask(rng, 5, 1);
                     Tensor conn = encode_connectivity(m, 1).to_tensor();
                     Tensor logits = random_leaf(rng, {1, 8, 5, 5}, 2.0);
                     return grad_check(
                         [&] {
                             BiconTerms b = bicon_loss(logits, conn);
                             return add(b.decouple, b.con_const);
                         },
                         {{"logits", logits}}, opt);
                 }});
    t.push_back({"net", 1e-3, 1e-4, [](const GradCheckOptions& base) {
                     GradCheckOptions opt = base;
                     opt.skip_kinks = true;
                     opt.denominator_floor = 1e-6;
                     GradCheckResult a = check_full_net(tiny_net_config(), opt.seed, false, opt);
                     GradCheckResult b = check_full_net(tiny_net_config(), opt.seed + 1, true, opt);
                     if (b.max_rel_error > a.max_rel_error) std::swap(a, b);
                     a.checked += b.checked;
                     a.skipped += b.skipped;
                     return a;
                 }});
    return t;
}

}  // namespace dconn
