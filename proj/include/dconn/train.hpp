#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dconn/losses.hpp"
#include "dconn/metrics.hpp"
#include "dconn/net.hpp"
#include "dconn/synth.hpp"

namespace dconn {

struct OptimizerConfig {
    double lr = 0.05;
    double momentum = 0.9;
    std::size_t steps = 1000;
    std::size_t batch_size = 1;
    // lr * (1 - step / steps)^0.9
    bool poly_decay = true;
};

struct LossConfig {
    bool use_sdl = true;
    std::size_t sdl_bins = 16;
};

struct RunConfig {
    NetConfig net;
    OptimizerConfig optimizer;
    LossConfig loss;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    std::string data_dir;
    std::string out_dir;

    void validate() const;
};

// Parses a JSON document. Unknown keys, wrong types and invalid values throw
// FormatError naming the offending field.
RunConfig parse_run_config(const std::string& json_text);
std::string dump_run_config(const RunConfig& config);

struct StepLog {
    std::size_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double main = 0.0;
    double prior = 0.0;
    double sd = 0.0;
    double decouple = 0.0;
    double con_const = 0.0;
};

void write_step_log(std::ostream& out, const StepLog& s);
std::string step_log_header();

// Connectivity labels and sizes prepared once per sample.
struct TrainingExample {
    const Sample* sample;
    ConnectivityMask connectivity;
};

struct Batch {
    Tensor images;
    std::vector<SegMask> masks;
    Tensor connectivity;
};

Batch make_batch(const std::vector<TrainingExample>& examples, const std::vector<std::size_t>& indices);

double poly_lr(double base, std::size_t step, std::size_t steps, bool poly);

class NonFiniteLossError : public std::runtime_error {
   public:
    NonFiniteLossError(std::size_t step, const std::string& what)
        : std::runtime_error("non-finite loss at step " + std::to_string(step) + ": " + what), step_(step) {}
    std::size_t step() const { return step_; }

   private:
    std::size_t step_;
};

struct TrainResult {
    NetParams params;
    SizePdf pdf;
    std::vector<StepLog> log;
};

// SGD with momentum (v = mu v + g; p -= lr_t v) on the composite loss.
// Fully determined by (config, data).
TrainResult train(const RunConfig& config, const std::vector<Sample>& data,
                  const std::function<void(const StepLog&)>& on_step = {});

// Same loss the trainer logs, evaluated once for a fixed batch.
LossReport evaluate_loss(const NetParams& params, const RunConfig& config, const Batch& batch, const SizePdf& pdf);

SegMask predict(const NetParams& params, const NetConfig& config, const Image& image, double threshold);

MetricsReport evaluate_predictions(const std::vector<Sample>& samples, const std::vector<SegMask>& predictions,
                                   std::size_t classes);

// PGM overlay: 255 on ground-truth boundary pixels, 128 on predicted foreground, 0 elsewhere.
Gray8 overlay(const SegMask& prediction, const SegMask& truth);

}  // namespace dconn
