#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "dconn/check_suite.hpp"
#include "dconn/train.hpp"
#include "support.hpp"

namespace dconn {
namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

RunConfig tiny_run(std::size_t steps = 4) {
    RunConfig c;
    c.net = tiny_net_config();
    c.optimizer.steps = steps;
    c.optimizer.batch_size = 2;
    c.seed = 11;
    return c;
}

std::vector<Sample> tiny_data(std::size_t n = 4) {
    DatasetSpec s;
    s.count = n;
    s.size = 16;
    s.seed = 2;
    s.min_area = 10;
    s.max_area = 60;
    return generate(s);
}

TEST(RunConfigParse, DefaultsAndFields) {
    const RunConfig c = parse_run_config(R"({"seed": 5, "optimizer": {"lr": 0.01, "steps": 7},
                                              "loss": {"use_sdl": false}, "net": {"input_size": 32}})");
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.optimizer.lr, 0.01);
    EXPECT_EQ(c.optimizer.steps, 7u);
    EXPECT_EQ(c.optimizer.momentum, 0.9);
    EXPECT_FALSE(c.loss.use_sdl);
    EXPECT_EQ(c.net.input_size, 32u);
}

TEST(RunConfigParse, RoundTripsThroughDump) {
    RunConfig c = tiny_run();
    c.data_dir = "d";
    c.threshold = 0.25;
    const RunConfig back = parse_run_config(dump_run_config(c));
    EXPECT_EQ(dump_run_config(back), dump_run_config(c));
    EXPECT_EQ(back.net, c.net);
}

void expect_format_error(const std::string& text, const std::string& needle) {
    try {
        parse_run_config(text);
        ADD_FAILURE() << "accepted " << text;
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
}

TEST(RunConfigParse, Errors) {
    expect_format_error(R"({"sed": 1})", "unknown config key 'sed'");
    expect_format_error(R"({"optimizer": {"rate": 1}})", "unknown config key 'optimizer.rate'");
    expect_format_error(R"({"optimizer": {"lr": "fast"}})", "bad config field 'optimizer.lr'");
    expect_format_error(R"({"optimizer": {"steps": 0}})", "optimizer.steps");
    expect_format_error(R"({"threshold": 1.5})", "threshold");
    expect_format_error(R"({"net": {"input_size": 30}})", "net");
    expect_format_error("{", "not valid JSON");
}

TEST(PolyLr, Schedule) {
    EXPECT_EQ(poly_lr(0.1, 0, 100, true), 0.1);
    EXPECT_NEAR(poly_lr(0.1, 50, 100, true), 0.1 * std::pow(0.5, 0.9), 1e-15);
    EXPECT_EQ(poly_lr(0.1, 50, 100, false), 0.1);
    double prev = 1.0;
    for (std::size_t s = 0; s < 100; ++s) {
        const double lr = poly_lr(1.0, s, 100, true);
        EXPECT_LT(lr, prev + 1e-15);
        EXPECT_GT(lr, 0.0);
        prev = lr;
    }
}

// Rebuilds the first batch and the initial parameters from the documented
// seed streams, then evaluates the loss without going through train().
TEST(Train, StepZeroMatchesIndependentEvaluation) {
    const RunConfig c = tiny_run(1);
    const auto data = tiny_data();
    const TrainResult r = train(c, data);

    const Rng root(c.seed);
    const NetParams params = init_params(c.net, root.split(1).next_u64());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng(root.split(2).next_u64()).split(0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    std::vector<TrainingExample> examples;
    std::vector<SegMask> labels;
    for (const auto& s : data) {
        examples.push_back({&s, encode_connectivity(s.mask, 1)});
        labels.push_back(s.mask);
    }
    const SizePdf pdf = estimate_size_pdf(labels, 1, c.loss.sdl_bins);
    const Batch b = make_batch(examples, {order[0], order[1]});
    const LossReport ref = evaluate_loss(params, c, b, pdf);
    ASSERT_EQ(r.log.size(), 1u);
    EXPECT_EQ(r.log[0].total, ref.total);
    EXPECT_EQ(r.log[0].main, ref.main);
    EXPECT_EQ(r.log[0].prior, ref.prior);
    EXPECT_EQ(r.log[0].lr, c.optimizer.lr);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
    RunConfig c = tiny_run(3);
    c.optimizer.lr = 0.0;
    const TrainResult r = train(c, tiny_data());
    const NetParams init = init_params(c.net, Rng(c.seed).split(1).next_u64());
    ASSERT_EQ(r.params.entries().size(), init.entries().size());
    for (std::size_t t = 0; t < init.entries().size(); ++t) {
        EXPECT_EQ(values(r.params.entries()[t].tensor), values(init.entries()[t].tensor))
            << init.entries()[t].name;
    }
}

TEST(Train, LogsAreDeterministicAndComposed) {
    const RunConfig c = tiny_run(4);
    std::size_t callbacks = 0;
    const TrainResult a = train(c, tiny_data(), [&](const StepLog&) { ++callbacks; });
    const TrainResult b = train(c, tiny_data());
    EXPECT_EQ(callbacks, 4u);
    std::ostringstream la, lb;
    for (const auto& s : a.log) write_step_log(la, s);
    for (const auto& s : b.log) write_step_log(lb, s);
    EXPECT_EQ(la.str(), lb.str());
    for (const auto& s : a.log) {
        EXPECT_NEAR(s.total, s.main + 0.3 * s.prior, 1e-12);
        EXPECT_EQ(s.lr, poly_lr(c.optimizer.lr, s.step, c.optimizer.steps, true));
    }
    for (std::size_t t = 0; t < a.params.entries().size(); ++t)
        EXPECT_EQ(values(a.params.entries()[t].tensor), values(b.params.entries()[t].tensor));
    RunConfig other = c;
    other.seed = 12;
    EXPECT_NE(train(other, tiny_data()).log[0].total, a.log[0].total);
}

TEST(Train, StepLogFormat) {
    EXPECT_EQ(step_log_header(), "step\tlr\ttotal\tmain\tprior\tsd\tdecouple\tcon_const");
    std::ostringstream out;
    write_step_log(out, {3, 0.5, 1.25, 1.0, 0.8333333333333333, 0.0, 0.5, 0.75});
    EXPECT_EQ(out.str(), "3\t0.5\t1.25\t1\t0.83333333333333326\t0\t0.5\t0.75\n");
}

TEST(Train, RejectsMismatchedData) {
    RunConfig c = tiny_run(1);
    c.net.input_size = 32;
    EXPECT_THROW(train(c, tiny_data()), ShapeError);
    EXPECT_THROW(train(tiny_run(1), {}), std::invalid_argument);
}

TEST(Train, DivergenceReportsStep) {
    RunConfig c = tiny_run(50);
    c.optimizer.lr = 1e200;
    c.optimizer.poly_decay = false;
    try {
        train(c, tiny_data());
        ADD_FAILURE() << "expected divergence";
    } catch (const NonFiniteLossError& e) {
        EXPECT_LT(e.step(), 50u);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Predict, OutputMatchesInputSize) {
    const RunConfig c = tiny_run(1);
    const auto data = tiny_data(1);
    const NetParams p = init_params(c.net, 1);
    const SegMask m = predict(p, c.net, data[0].image, 0.5);
    EXPECT_EQ(m.height, 16u);
    EXPECT_EQ(m.width, 16u);
    EXPECT_LE(m.max_label(), 1);
}

TEST(Overlay, MarksBoundaryAndPrediction) {
    const SegMask truth = testing::mask_from_rows({
        ".....",
        ".111.",
        ".111.",
        ".111.",
        ".....",
    });
    SegMask pred(5, 5);
    pred.at(0, 0) = 1;
    pred.at(2, 2) = 1;
    const Gray8 g = overlay(pred, truth);
    EXPECT_EQ(g.pixels[0], 128);
    EXPECT_EQ(g.pixels[2 * 5 + 2], 128);
    EXPECT_EQ(g.pixels[1 * 5 + 1], 255);
    EXPECT_EQ(g.pixels[3 * 5 + 2], 255);
    EXPECT_EQ(g.pixels[4 * 5 + 4], 0);
}

TEST(EvaluatePredictions, GroundTruthScoresOne) {
    const auto data = tiny_data(3);
    std::vector<SegMask> preds;
    for (const auto& s : data) preds.push_back(s.mask);
    const MetricsReport r = evaluate_predictions(data, preds, 1);
    EXPECT_EQ(r.mean_dice, 1.0);
    EXPECT_EQ(r.betti0_error, 0.0);
    EXPECT_EQ(r.rows[0].name, data[0].name);
}

}  // namespace
}  // namespace dconn
