#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dconn/check_suite.hpp"
#include "dconn/cli.hpp"
#include "dconn/metrics.hpp"
#include "dconn/synth.hpp"
#include "dconn/train.hpp"

namespace dconn {
namespace {

namespace fs = std::filesystem;

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class CliTest : public ::testing::Test {
   protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("dconn_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    // 16x16 blobs and a two-step config matching them.
    void make_training_inputs() {
        ASSERT_EQ(run({"gen", "--kind", "blobs", "--n", "3", "--size", "16", "--seed", "4", "--out", path("data")})
                      .code,
                  0);
        RunConfig c;
        c.net = tiny_net_config();
        c.optimizer.steps = 2;
        c.seed = 9;
        std::ofstream(path("config.json")) << dump_run_config(c);
    }

    fs::path dir_;
};

TEST_F(CliTest, EncodeDecodeRoundTrip) {
    ASSERT_EQ(run({"gen", "--kind", "rings", "--n", "2", "--size", "32", "--seed", "1", "--out", path("d")}).code, 0);
    for (const char* dtype : {"u8", "f32"}) {
        const auto r = run({"encode", "--seg", path("d/mask_0001.pgm"), "--classes", "1", "--out", path("m.cmk"),
                            "--dtype", dtype});
        ASSERT_EQ(r.code, 0) << r.err;
        ASSERT_EQ(run({"decode", "--conn", path("m.cmk"), "--threshold", "0.5", "--out", path("back.pgm")}).code, 0);
        EXPECT_EQ(slurp(path("back.pgm")), slurp(path("d/mask_0001.pgm"))) << dtype;
    }
}

TEST_F(CliTest, AllBackgroundEncodesToZeros) {
    write_pgm_file(path("empty.pgm"), Gray8{8, 8, std::vector<std::uint8_t>(64, 0)});
    ASSERT_EQ(run({"encode", "--seg", path("empty.pgm"), "--out", path("e.cmk")}).code, 0);
    const ConnectivityMask m = read_cmk_file(path("e.cmk"));
    EXPECT_EQ(m.height, 8u);
    for (double v : m.values) EXPECT_EQ(v, 0.0);
}

TEST_F(CliTest, BadMagicExitsTwo) {
    std::ofstream(path("bad.cmk"), std::ios::binary) << "XXXXjunkjunkjunk";
    const auto r = run({"decode", "--conn", path("bad.cmk"), "--out", path("x.pgm")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("bad CMK magic"), std::string::npos) << r.err;
}

TEST_F(CliTest, UsageErrors) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"encode", "--seg", path("missing.pgm"), "--out", path("o.cmk")}).code, 2);
    EXPECT_EQ(run({"gen", "--kind", "spirals", "--out", path("g")}).code, 2);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, GradcheckScopes) {
    const auto conv = run({"gradcheck", "--scope", "conv"});
    EXPECT_EQ(conv.code, 0) << conv.out << conv.err;
    EXPECT_NE(conv.out.find("conv"), std::string::npos);
    EXPECT_NE(conv.out.find("ok"), std::string::npos);
    EXPECT_EQ(run({"gradcheck", "--scope", "no_such_op"}).code, 2);
    const auto list = run({"gradcheck", "--list"});
    EXPECT_EQ(list.code, 0);
    EXPECT_NE(list.out.find("net\n"), std::string::npos);
    EXPECT_NE(list.out.find("bilateral_vote\n"), std::string::npos);
}

TEST_F(CliTest, TrainIsReproducible) {
    make_training_inputs();
    ASSERT_EQ(run({"train", "--config", path("config.json"), "--data", path("data"), "--out", path("a")}).code, 0);
    ASSERT_EQ(run({"train", "--config", path("config.json"), "--data", path("data"), "--out", path("b")}).code, 0);
    // config.json records out_dir, so only the other artifacts must match.
    for (const char* f : {"checkpoint.dcw", "loss_log.tsv", "size_pdf.txt"}) {
        EXPECT_FALSE(slurp(dir_ / "a" / f).empty()) << f;
        EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    }
    const std::string log = slurp(dir_ / "a" / "loss_log.tsv");
    EXPECT_EQ(log.rfind(step_log_header() + "\n0\t", 0), 0u);

    setenv("DCONN_SEED", "123", 1);
    const auto r = run({"train", "--config", path("config.json"), "--data", path("data"), "--out", path("c")});
    unsetenv("DCONN_SEED");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(slurp(dir_ / "c" / "loss_log.tsv"), log);
    EXPECT_NE(slurp(dir_ / "c" / "config.json").find("\"seed\": 123"), std::string::npos);
}

TEST_F(CliTest, TrainRejectsBadConfig) {
    make_training_inputs();
    std::ofstream(path("bad.json")) << R"({"optimizer": {"lr": "x"}})";
    const auto r = run({"train", "--config", path("bad.json"), "--data", path("data"), "--out", path("a")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("optimizer.lr"), std::string::npos);
}

TEST_F(CliTest, EvalMatchesRecomputation) {
    make_training_inputs();
    ASSERT_EQ(run({"train", "--config", path("config.json"), "--data", path("data"), "--out", path("t")}).code, 0);
    const std::vector<std::string> eval = {"eval",     "--data",     path("data"), "--checkpoint",
                                           path("t/checkpoint.dcw"), "--config",   path("config.json"),
                                           "--save-predictions", path("preds"), "--overlays", path("ov")};
    auto with_report = [&](const std::string& report) {
        auto args = eval;
        args.insert(args.end(), {"--report", report});
        return args;
    };
    ASSERT_EQ(run(with_report(path("r1.tsv"))).code, 0);
    ASSERT_EQ(run(with_report(path("r2.tsv"))).code, 0);
    EXPECT_EQ(slurp(path("r1.tsv")), slurp(path("r2.tsv")));
    EXPECT_TRUE(fs::exists(dir_ / "ov" / "overlay_0000.pgm"));

    // Scoring the saved predictions reproduces the report.
    ASSERT_EQ(run({"eval", "--data", path("data"), "--predictions", path("preds"), "--report", path("r3.tsv")}).code,
              0);
    EXPECT_EQ(slurp(path("r3.tsv")), slurp(path("r1.tsv")));

    const Dataset ds = read_dataset(path("data"));
    std::vector<SegMask> preds;
    for (const auto& s : ds.samples) preds.push_back(mask_from_gray(read_pgm_file(path("preds/pred_" + s.name + ".pgm"))));
    std::ostringstream direct;
    write_report(direct, evaluate_predictions(ds.samples, preds, 1));
    EXPECT_EQ(direct.str(), slurp(path("r1.tsv")));
}

TEST_F(CliTest, GroundTruthAsPredictionScoresOne) {
    ASSERT_EQ(run({"gen", "--kind", "blobs", "--n", "3", "--size", "16", "--seed", "4", "--out", path("data")}).code,
              0);
    fs::create_directories(dir_ / "gt");
    for (const char* n : {"0000", "0001", "0002"}) {
        fs::copy_file(dir_ / "data" / ("mask_" + std::string(n) + ".pgm"), dir_ / "gt" / ("pred_" + std::string(n) + ".pgm"));
    }
    const auto r = run({"eval", "--data", path("data"), "--predictions", path("gt")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("mean_dice\t1\n"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("betti0_error\t0\n"), std::string::npos);
}

TEST_F(CliTest, EvalShapeMismatch) {
    make_training_inputs();
    ASSERT_EQ(run({"train", "--config", path("config.json"), "--data", path("data"), "--out", path("t")}).code, 0);
    RunConfig other;
    other.net = tiny_net_config();
    other.net.decoder_channels = {8, 4, 4, 4};
    std::ofstream(path("other.json")) << dump_run_config(other);
    const auto r = run({"eval", "--data", path("data"), "--checkpoint", path("t/checkpoint.dcw"), "--config",
                        path("other.json")});
    EXPECT_EQ(r.code, 2);
}

}  // namespace
}  // namespace dconn
