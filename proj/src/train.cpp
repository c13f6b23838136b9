#include "dconn/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "dconn/ops.hpp"
#include "json.hpp"

namespace dconn {

using json = nlohmann::json;

void RunConfig::validate() const {
    net.validate();
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) throw FormatError("bad config field 'optimizer.lr'");
    if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
        throw FormatError("bad config field 'optimizer.momentum': must lie in [0,1)");
    }
    if (optimizer.steps < 1) throw FormatError("bad config field 'optimizer.steps': must be at least 1");
    if (optimizer.batch_size < 1) throw FormatError("bad config field 'optimizer.batch_size': must be at least 1");
    if (loss.sdl_bins < 1) throw FormatError("bad config field 'loss.sdl_bins': must be at least 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw FormatError("bad config field 'threshold': must lie in (0,1)");
}

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> known) {
    if (!obj.is_object()) throw FormatError("bad config field '" + where + "': expected an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw FormatError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& where, T& out) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError("bad config field '" + (where.empty() ? "" : where + ".") + key + "': wrong type");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg;
    reject_unknown(doc, "", {"net", "optimizer", "loss", "seed", "threshold", "data_dir", "out_dir"});
    read_field(doc, "seed", "", cfg.seed);
    read_field(doc, "threshold", "", cfg.threshold);
    read_field(doc, "data_dir", "", cfg.data_dir);
    read_field(doc, "out_dir", "", cfg.out_dir);
    if (doc.contains("net")) {
        const json& n = doc["net"];
        reject_unknown(n, "net",
                       {"input_channels", "classes", "input_size", "encoder_channels", "decoder_channels",
                        "attention_reduction"});
        read_field(n, "input_channels", "net", cfg.net.input_channels);
        read_field(n, "classes", "net", cfg.net.classes);
        read_field(n, "input_size", "net", cfg.net.input_size);
        read_field(n, "encoder_channels", "net", cfg.net.encoder_channels);
        read_field(n, "decoder_channels", "net", cfg.net.decoder_channels);
        read_field(n, "attention_reduction", "net", cfg.net.attention_reduction);
    }
    if (doc.contains("optimizer")) {
        const json& o = doc["optimizer"];
        reject_unknown(o, "optimizer", {"lr", "momentum", "steps", "batch_size", "poly_decay"});
        read_field(o, "lr", "optimizer", cfg.optimizer.lr);
        read_field(o, "momentum", "optimizer", cfg.optimizer.momentum);
        read_field(o, "steps", "optimizer", cfg.optimizer.steps);
        read_field(o, "batch_size", "optimizer", cfg.optimizer.batch_size);
        read_field(o, "poly_decay", "optimizer", cfg.optimizer.poly_decay);
    }
    if (doc.contains("loss")) {
        const json& l = doc["loss"];
        reject_unknown(l, "loss", {"use_sdl", "sdl_bins"});
        read_field(l, "use_sdl", "loss", cfg.loss.use_sdl);
        read_field(l, "sdl_bins", "loss", cfg.loss.sdl_bins);
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("bad config field 'net': ") + e.what());
    }
    return cfg;
}

std::string dump_run_config(const RunConfig& c) {
    json doc = {
        {"seed", c.seed},
        {"threshold", c.threshold},
        {"data_dir", c.data_dir},
        {"out_dir", c.out_dir},
        {"net",
         {{"input_channels", c.net.input_channels},
          {"classes", c.net.classes},
          {"input_size", c.net.input_size},
          {"encoder_channels", c.net.encoder_channels},
          {"decoder_channels", c.net.decoder_channels},
          {"attention_reduction", c.net.attention_reduction}}},
        {"optimizer",
         {{"lr", c.optimizer.lr},
          {"momentum", c.optimizer.momentum},
          {"steps", c.optimizer.steps},
          {"batch_size", c.optimizer.batch_size},
          {"poly_decay", c.optimizer.poly_decay}}},
        {"loss", {{"use_sdl", c.loss.use_sdl}, {"sdl_bins", c.loss.sdl_bins}}},
    };
    return doc.dump(2);
}

std::string step_log_header() { return "step\tlr\ttotal\tmain\tprior\tsd\tdecouple\tcon_const"; }

void write_step_log(std::ostream& out, const StepLog& s) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", s.step, s.lr, s.total,
                  s.main, s.prior, s.sd, s.decouple, s.con_const);
    out << buf;
}

Batch make_batch(const std::vector<TrainingExample>& examples, const std::vector<std::size_t>& indices) {
    Batch b;
    std::vector<const Image*> images;
    std::vector<double> conn;
    Shape conn_shape;
    for (std::size_t i : indices) {
        const TrainingExample& ex = examples.at(i);
        images.push_back(&ex.sample->image);
        b.masks.push_back(ex.sample->mask);
        conn.insert(conn.end(), ex.connectivity.values.begin(), ex.connectivity.values.end());
        conn_shape = {0, ex.connectivity.classes * kDirections, ex.connectivity.height, ex.connectivity.width};
    }
    conn_shape[0] = indices.size();
    b.images = image_batch(images);
    b.connectivity = Tensor(conn_shape, std::move(conn));
    return b;
}

double poly_lr(double base, std::size_t step, std::size_t steps, bool poly) {
    if (!poly) return base;
    return base * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(steps), 0.9);
}

LossReport evaluate_loss(const NetParams& params, const RunConfig& config, const Batch& batch, const SizePdf& pdf) {
    ForwardOutput out = net_forward(batch.images, params, config.net);
    return total_loss(out, batch.masks, batch.connectivity, &pdf, config.loss.use_sdl);
}

namespace {

// Epoch-wise shuffled index stream; epoch e uses stream e of the seed.
class BatchSampler {
   public:
    BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), rng_(seed) {}

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        while (out.size() < batch) {
            if (pos_ == order_.size()) reshuffle();
            out.push_back(order_[pos_++]);
        }
        return out;
    }

   private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), 0);
        Rng r = rng_.split(epoch_++);
        for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[r.below(i)]);
        pos_ = 0;
    }

    std::size_t n_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t epoch_ = 0;
};

constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kBatchStream = 2;

}  // namespace

TrainResult train(const RunConfig& config, const std::vector<Sample>& data,
                  const std::function<void(const StepLog&)>& on_step) {
    config.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t classes = config.net.classes;
    std::vector<TrainingExample> examples;
    std::vector<SegMask> labels;
    for (const auto& s : data) {
        if (s.image.height != config.net.input_size || s.image.width != config.net.input_size) {
            throw ShapeError("train: sample '" + s.name + "' size does not match net.input_size");
        }
        examples.push_back({&s, encode_connectivity(s.mask, classes)});
        labels.push_back(s.mask);
    }

    const Rng root(config.seed);
    TrainResult result{init_params(config.net, root.split(kInitStream).next_u64()),
                       estimate_size_pdf(labels, classes, config.loss.sdl_bins),
                       {}};
    std::vector<std::vector<double>> velocity;
    for (const auto& e : result.params.entries()) velocity.emplace_back(e.tensor.size(), 0.0);

    BatchSampler sampler(examples.size(), root.split(kBatchStream).next_u64());
    const auto& opt = config.optimizer;
    for (std::size_t step = 0; step < opt.steps; ++step) {
        Batch batch = make_batch(examples, sampler.next(opt.batch_size));
        LossReport report;
        try {
            report = evaluate_loss(result.params, config, batch, result.pdf);
        } catch (const NonFiniteError& e) {
            throw NonFiniteLossError(step, e.what());
        }
        if (!std::isfinite(report.total)) throw NonFiniteLossError(step, "total loss");

        StepLog entry{step, poly_lr(opt.lr, step, opt.steps, opt.poly_decay), report.total, report.main,
                      report.prior, report.sd, report.decouple, report.con_const};
        result.params.zero_grad();
        report.objective.backward();
        for (std::size_t t = 0; t < result.params.entries().size(); ++t) {
            Tensor param = result.params.entries()[t].tensor;
            const std::vector<double> g = param.grad();
            auto values = param.mutable_data();
            auto& v = velocity[t];
            for (std::size_t i = 0; i < values.size(); ++i) {
                v[i] = opt.momentum * v[i] + g[i];
                values[i] -= entry.lr * v[i];
            }
            for (double x : values)
                if (!std::isfinite(x)) throw NonFiniteLossError(step, "parameter update diverged");
        }
        result.params.zero_grad();
        result.log.push_back(entry);
        if (on_step) on_step(entry);
    }
    return result;
}

SegMask predict(const NetParams& params, const NetConfig& config, const Image& image, double threshold) {
    ForwardOutput out = net_forward(image_batch({&image}), params, config);
    return decode_segmentation(ConnectivityMask::from_tensor(sigmoid(out.x_main.detach())), threshold);
}

MetricsReport evaluate_predictions(const std::vector<Sample>& samples, const std::vector<SegMask>& predictions,
                                   std::size_t classes) {
    std::vector<SegMask> truths;
    std::vector<std::string> names;
    for (const auto& s : samples) {
        truths.push_back(s.mask);
        names.push_back(s.name);
    }
    return evaluate(predictions, truths, classes, names);
}

Gray8 overlay(const SegMask& prediction, const SegMask& truth) {
    Gray8 g{truth.height, truth.width, std::vector<std::uint8_t>(truth.labels.size(), 0)};
    for (long r = 0; r < static_cast<long>(truth.height); ++r)
        for (long c = 0; c < static_cast<long>(truth.width); ++c) {
            const std::size_t i = static_cast<std::size_t>(r) * truth.width + static_cast<std::size_t>(c);
            if (prediction.labels[i]) g.pixels[i] = 128;
            const std::uint8_t l = truth.labels[i];
            if (!l) continue;
            for (const auto& o : kDirectionTable) {
                const long nr = r + o.dr, nc = c + o.dc;
                const bool outside = nr < 0 || nc < 0 || nr >= static_cast<long>(truth.height) ||
                                     nc >= static_cast<long>(truth.width);
                if (outside || truth.at(nr, nc) != l) {
                    g.pixels[i] = 255;
                    break;
                }
            }
        }
    return g;
}

}  // namespace dconn
